"""Many-to-many matching of noisy book-spine OCR text against a book catalogue."""

from shelfmatch import _parallel

__version__ = "0.1.0"

NOT_IN_LIST = "__not_in_list__"

_parallel.reserve_threads(None)
