'''Minimal filesystem layer used by the pipeline files

Every artifact the CLI reads or writes goes through an :class:`FS`.
Writes are atomic: data lands in a temporary sibling first and is
renamed over the target, so a reader never sees a half-written file.

'''
import abc
import contextlib
import io
import os
import uuid
from abc import abstractmethod
from typing import Optional, Union
from urllib.parse import urlparse


class FS(abc.ABC):
    '''Directory-rooted file access

    All paths are relative to :attr:`cwd`.

    '''

    _cwd = ''

    @property
    def cwd(self):
        return self._cwd

    @abstractmethod
    def open(self, file_path: str, mode: str = 'r', **kwargs):
        raise NotImplementedError()

    @abstractmethod
    def isdir(self, file_path: str) -> bool:
        raise NotImplementedError()

    @abstractmethod
    def exists(self, file_path: str) -> bool:
        raise NotImplementedError()

    @abstractmethod
    def rename(self, src: str, dst: str) -> None:
        raise NotImplementedError()

    @abstractmethod
    def remove(self, file_path: str) -> None:
        raise NotImplementedError()

    def read_text(self, file_path: str) -> str:
        with self.open(file_path, 'r', encoding='utf-8') as f:
            return f.read()

    def write_atomic(self, file_path: str, data: Union[bytes, str]) -> None:
        '''Writes ``data`` to ``file_path`` via a temporary file and rename

        A failed write removes the temporary file and leaves any existing
        target untouched.

        '''
        dirname, filename = os.path.split(file_path)
        tmp = os.path.join(dirname, '.{}.{}.tmp'.format(filename,
                                                        uuid.uuid4().hex))
        mode = 'wb' if isinstance(data, bytes) else 'w'
        kwargs = {} if isinstance(data, bytes) else {'encoding': 'utf-8'}
        try:
            with self.open(tmp, mode, **kwargs) as f:
                f.write(data)
            self.rename(tmp, file_path)
        except BaseException:
            if self.exists(tmp):
                self.remove(tmp)
            raise

    def close(self) -> None:
        pass

    def __enter__(self) -> 'FS':
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()


class Local(FS):
    '''POSIX directory

    Arguments:
        cwd (str): Root directory; ``None`` means the process working
            directory.
        create (bool): Create ``cwd`` when it does not exist.

    '''

    def __init__(self, cwd: Optional[str] = None, create: bool = False):
        self._cwd = cwd or ''
        if not self.isdir(''):
            if create:
                os.makedirs(self._cwd, exist_ok=True)
            else:
                raise ValueError('{} must be a directory'.format(self._cwd))

    @property
    def cwd(self):
        return self._cwd or os.getcwd()

    def _path(self, file_path):
        return os.path.join(self.cwd, file_path)

    def open(self, file_path, mode='r', **kwargs):
        return io.open(self._path(file_path), mode, **kwargs)

    def isdir(self, file_path):
        return os.path.isdir(self._path(file_path))

    def exists(self, file_path):
        return os.path.exists(self._path(file_path))

    def rename(self, src, dst):
        os.replace(self._path(src), self._path(dst))

    def remove(self, file_path):
        os.remove(self._path(file_path))


def from_url(url: str, create: bool = False) -> FS:
    '''Creates the FS rooted at a directory URL

    Only the ``file`` scheme (or a bare path) is available.

    '''
    parsed = urlparse(url)
    scheme = parsed.scheme or 'file'
    if scheme != 'file':
        raise ValueError('Scheme {} is not supported'.format(scheme))
    return Local(parsed.path, create=create)


@contextlib.contextmanager
def open_url(url: str, mode: str = 'r', **kwargs):
    '''Opens a file given its full URL'''
    dirname, filename = os.path.split(url)
    with from_url(dirname or '.') as fs:
        with fs.open(filename, mode, **kwargs) as fp:
            yield fp


def write_url(url: str, data: Union[bytes, str],
              create: bool = True) -> None:
    '''Atomically writes ``data`` to a file URL, creating its directory'''
    dirname, filename = os.path.split(url)
    with from_url(dirname or '.', create=create) as fs:
        fs.write_atomic(filename, data)


def exists_url(url: str) -> bool:
    '''Whether a file or directory URL exists'''
    parsed = urlparse(url)
    scheme = parsed.scheme or 'file'
    if scheme != 'file':
        raise ValueError('Scheme {} is not supported'.format(scheme))
    return os.path.exists(parsed.path)
