from enum import Enum, IntEnum


class WasteClass(IntEnum):
    OPAQUE_PLASTIC_BOTTLE = 0
    PAPERBOARD_BOX = 1
    CLEAR_PLASTIC_BOTTLE = 2
    DRINK_CAN = 3
    OPAQUE_PLASTIC_CONTAINER = 4

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: "int | str | WasteClass") -> "WasteClass":
        """Accepts an id, a snake_case name or an existing member."""
        if isinstance(value, cls):
            return value
        if isinstance(value, bool):
            raise ValueError(f"Invalid class label: {value!r}")
        if isinstance(value, int):
            return cls(value)
        if isinstance(value, str):
            text = value.strip()
            if text.isdigit():
                return cls(int(text))
            try:
                return cls[text.upper()]
            except KeyError:
                pass
        valid = ", ".join(member.label for member in cls)
        raise ValueError(f"Invalid class label: {value!r}. Valid labels: {valid}")


class Environment(str, Enum):
    INDOOR = "indoor"
    OUTDOOR = "outdoor"


class AreaBucket(str, Enum):
    ALL = "all"
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


class PlyFormat(str, Enum):
    ASCII = "ascii"
    BINARY_LITTLE_ENDIAN = "binary_little_endian"


class ObjectStatus(str, Enum):
    OK = "ok"
    FAILED = "failed"
