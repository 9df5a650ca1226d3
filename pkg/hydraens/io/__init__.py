from .container import MAGIC, dumps, load, loads, save  # NOQA
from .fs import (FS, Local, exists_url, from_url, open_url,  # NOQA
                 write_url)
