"""Published JSON schema for structure files."""
import jsonschema

from .structure import StructureError

_number_list = {"type": "array", "items": {"type": "number"}}
_id_list = {"type": "array", "items": {"type": "string"}}

STRUCTURE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$id": "kgite/structure/v1",
    "title": "kgite causal structure",
    "type": "object",
    "required": ["diseases", "labs"],
    "properties": {
        "n_windows": {"type": "integer", "minimum": 1},
        "window_length_years": {"type": "number", "exclusiveMinimum": 0},
        "individual_effect_sigma": {"type": "number", "minimum": 0},
        "individual_effect_correlation": {"type": "number", "minimum": 0, "maximum": 1},
        "diseases": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "lines", "diagnostic_lab", "threshold"],
                "properties": {
                    "id": {"type": "string"},
                    "parents": _id_list,
                    "parent_weights": _number_list,
                    "persistence": {"type": "number"},
                    "drift": {"type": "number"},
                    "noise_std": {"type": "number", "minimum": 0},
                    "init_low": {"type": "number"},
                    "init_high": {"type": "number"},
                    "init_parent_weights": _number_list,
                    "lines": {
                        "type": "array",
                        "minItems": 1,
                        "maxItems": 3,
                        "items": {
                            "type": "object",
                            "required": ["effect"],
                            "properties": {"effect": _number_list},
                        },
                    },
                    "diagnostic_lab": {"type": "string"},
                    "threshold": {"type": "number"},
                },
            },
        },
        "labs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "baseline", "weights"],
                "properties": {
                    "id": {"type": "string"},
                    "baseline": {"type": "number"},
                    "weights": {
                        "type": "object",
                        "minProperties": 1,
                        "additionalProperties": {"type": "number"},
                    },
                    "noise_std": {"type": "number", "minimum": 0},
                    "units": {"type": "string"},
                },
            },
        },
        "outcomes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "parents", "threshold"],
                "properties": {
                    "id": {"type": "string"},
                    "parents": {**_id_list, "minItems": 1},
                    "weights": _number_list,
                    "threshold": {"type": "number"},
                    "onset_window": {"type": ["integer", "null"], "minimum": 0},
                },
            },
        },
    },
}


def validate_document(doc) -> None:
    try:
        jsonschema.validate(doc, STRUCTURE_SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise StructureError(f"schema violation at {path or '<root>'}: {exc.message}") from exc
