from .coder import CodecOutput, DecodeError, decode, encode
from .model import AlphabetMismatch, KTModel

__all__ = ["AlphabetMismatch", "CodecOutput", "DecodeError", "KTModel", "decode", "encode"]
from .schemes import (  # noqa: E402
    ALL_SCHEMES,
    Scheme,
    SchemeConfig,
    SchemePrerequisiteError,
    SchemeResult,
    compress_scheme,
    decompress_scheme,
    pack_container,
    unpack_container,
)

__all__ += [
    "ALL_SCHEMES",
    "Scheme",
    "SchemeConfig",
    "SchemePrerequisiteError",
    "SchemeResult",
    "compress_scheme",
    "decompress_scheme",
    "pack_container",
    "unpack_container",
]
