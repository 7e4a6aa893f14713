"""Exception types shared across the toolkit.

Everything user-triggerable raises ToolkitError (or a subclass) so the CLI can
map it to exit code 1; genuine bugs surface as ordinary Python exceptions.
"""


class ToolkitError(Exception):
    """Base class for expected, user-reportable failures."""


class CorpusDecodeError(ToolkitError):
    """Input file is not valid UTF-8. Carries the byte offset of the fault."""

    def __init__(self, path: str, byte_offset: int, reason: str):
        self.path = path
        self.byte_offset = byte_offset
        super().__init__(f"{path}: invalid UTF-8 at byte offset {byte_offset}: {reason}")


class LineCountMismatchError(ToolkitError):
    """Parallel files disagree on line count."""

    def __init__(self, english_path: str, target_path: str, n_english: int, n_target: int):
        self.n_english = n_english
        self.n_target = n_target
        super().__init__(
            f"parallel line counts differ: {english_path} has {n_english}, "
            f"{target_path} has {n_target}"
        )


class OovCharacterError(ToolkitError):
    """Text contains a character the vocabulary cannot represent."""

    def __init__(self, char: str, offset: int):
        self.char = char
        self.offset = offset
        super().__init__(f"character {char!r} (U+{ord(char):04X}) at offset {offset} is not in the vocabulary")


class UnsegmentableError(ToolkitError):
    """No token sequence in the vocabulary covers the text."""

    def __init__(self, text: str, offset: int):
        self.offset = offset
        super().__init__(f"no segmentation covers offset {offset} of {text!r}")
