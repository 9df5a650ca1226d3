'''Binary container for models and fused models

Layout::

    HYDRAM1\\n
    <manifest length in bytes>\\n
    <manifest: JSON, sorted keys>
    <payload: little-endian binary64 tensors in manifest order>

The manifest holds ``kind`` (``model`` or ``hydra``), the architecture
``config``, the member count, one head mask per member, the heads every
layer of every member carries, and the tensor index: ``name``,
``shape``, byte ``offset`` into the payload and element ``count``.
Tensors are always stored as binary64 and converted to the current
precision on load.

'''
import io
import json
from typing import Dict, List, Union

import numpy as np

from hydraens.errors import (BadMagicError, ConfigError, ContainerError,
                             DimensionError, ManifestError,
                             OffsetOverlapError, ShapeMismatchError,
                             TruncatedPayloadError)
from hydraens.fusion import HydraModel
from hydraens.fusion.hydra import HydraLayer, MemberAttention
from hydraens.io.fs import open_url, write_url
from hydraens.numerics import Tensor, default_dtype
from hydraens.transformer import (HeadMask, LayerWeights, Model,
                                  TransformerConfig)
from hydraens.transformer.model import LAYER_FIELDS

MAGIC = b'HYDRAM1\n'
DTYPE = '<f8'
MAX_MANIFEST = 1 << 24
_MANIFEST_FIELDS = ('kind', 'config', 'members', 'masks', 'heads', 'tensors')

_MEMBER_NAMES = [(a, n) for a, n in LAYER_FIELDS
                 if a in ('w_q', 'b_q', 'w_k', 'b_k', 'w_v', 'b_v', 'w_o',
                          'b_o')]
_SHARED_NAMES = [(a, n) for a, n in LAYER_FIELDS if (a, n) not in
                 _MEMBER_NAMES]

Saveable = Union[Model, HydraModel]


def _trunk_head(m) -> Dict[str, Tensor]:
    return {'embed.token': m.token_embedding, 'embed.pos': m.pos_embedding}


def _trunk_tail(m) -> Dict[str, Tensor]:
    return {'final_ln.gamma': m.lnf_gamma, 'final_ln.beta': m.lnf_beta,
            'classifier.W': m.w_cls, 'classifier.b': m.b_cls}


def _hydra_tensors(hm: HydraModel) -> Dict[str, Tensor]:
    tensors = _trunk_head(hm)
    for l, layer in enumerate(hm.layers):
        for m, att in enumerate(layer.members):
            for attr, name in _MEMBER_NAMES:
                tensors['layer{}.member{}.{}'.format(l, m, name)] = \
                    getattr(att, attr)
        for attr, name in _SHARED_NAMES:
            tensors['layer{}.shared.{}'.format(l, name)] = \
                getattr(layer, attr)
    tensors.update(_trunk_tail(hm))
    return tensors


def dumps(obj: Saveable) -> bytes:
    '''Serializes a :class:`Model` or :class:`HydraModel`'''
    if isinstance(obj, HydraModel):
        kind = 'hydra'
        tensors = _hydra_tensors(obj)
        masks = [mask.to_text() for mask in obj.masks]
        heads = [[list(layer.members[m].heads) for layer in obj.layers]
                 for m in range(obj.n_members)]
    elif isinstance(obj, Model):
        kind = 'model'
        tensors = obj.parameters()
        masks = [obj.mask().to_text()]
        heads = [[list(h) for h in obj.heads]]
    else:
        raise TypeError('cannot save {}'.format(type(obj).__name__))

    index, chunks, offset = [], [], 0
    for name, t in tensors.items():
        data = np.ascontiguousarray(t.data, dtype=DTYPE)
        index.append({'name': name, 'shape': list(t.shape),
                      'offset': offset, 'count': int(data.size)})
        chunks.append(data.tobytes())
        offset += data.nbytes
    manifest = json.dumps({
        'kind': kind, 'config': obj.config.to_dict(),
        'members': len(masks), 'masks': masks, 'heads': heads,
        'tensors': index,
    }, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return b''.join([MAGIC, b'%d\n' % len(manifest), manifest] + chunks)


def loads(data: bytes) -> Saveable:
    return _read(io.BytesIO(data))


def save(obj: Saveable, path: str) -> None:
    '''Writes ``obj`` to ``path`` atomically'''
    write_url(path, dumps(obj))


def load(path: str) -> Saveable:
    '''Reads a container, validating it before anything is built

    Raises:
        BadMagicError: The file does not start with the magic string.
        ManifestError: The manifest is unreadable or misses a field.
        TruncatedPayloadError: The payload length differs from the sum
            of the declared tensor sizes.
        OffsetOverlapError: A tensor offset overlaps its predecessor.
        ShapeMismatchError: A declared shape disagrees with its element
            count or with the architecture.

    '''
    with open_url(path, 'rb') as f:
        return _read(f)


def _read(f) -> Saveable:
    magic = f.read(len(MAGIC))
    if magic != MAGIC:
        raise BadMagicError('magic: expected {!r}, got {!r}'
                            .format(MAGIC, magic))
    line = f.readline(32)
    try:
        length = int(line)
    except ValueError:
        raise ManifestError('manifest length: not an integer: {!r}'
                            .format(line))
    if not 0 < length <= MAX_MANIFEST:
        raise ManifestError('manifest length: {} out of range ((0, {}])'
                            .format(length, MAX_MANIFEST))
    raw = f.read(length)
    if len(raw) != length:
        raise TruncatedPayloadError('manifest: expected {} bytes, got {}'
                                    .format(length, len(raw)))
    try:
        manifest = json.loads(raw.decode('utf-8'))
    except (UnicodeDecodeError, ValueError) as e:
        raise ManifestError('manifest: {}'.format(e))
    if not isinstance(manifest, dict):
        raise ManifestError('manifest: not an object')
    for key in _MANIFEST_FIELDS:
        if key not in manifest:
            raise ManifestError('manifest: missing field {}'.format(key))

    index = manifest['tensors']
    expected = _check_index(index)
    # never read beyond what the manifest declares, plus one byte to
    # detect trailing data
    payload = f.read(expected + 1)
    if len(payload) != expected:
        raise TruncatedPayloadError('payload: expected {} bytes, got {}{}'
                                    .format(expected, len(payload),
                                            '+' if len(payload) > expected
                                            else ''))
    dtype = default_dtype()
    tensors = {}
    for entry in index:
        arr = np.frombuffer(payload, dtype=DTYPE, count=entry['count'],
                            offset=entry['offset'])
        tensors[entry['name']] = Tensor.wrap(
            arr.reshape(entry['shape']).astype(dtype))
    try:
        return _build(manifest, tensors)
    except (DimensionError, ConfigError) as e:
        raise ShapeMismatchError('{}: {}'.format(type(e).__name__, e))


def _check_index(index) -> int:
    if not isinstance(index, list) or not index:
        raise ManifestError('tensors: expected a non-empty list')
    running = 0
    names = set()
    for i, entry in enumerate(index):
        try:
            name, shape = entry['name'], entry['shape']
            offset, count = int(entry['offset']), int(entry['count'])
        except (KeyError, TypeError, ValueError):
            raise ManifestError('tensors[{}]: needs name, shape, offset and '
                                'count: {!r}'.format(i, entry))
        if name in names:
            raise ManifestError('tensors[{}]: duplicate name {}'
                                .format(i, name))
        names.add(name)
        if not isinstance(shape, list) or \
                any(not isinstance(s, int) or s < 0 for s in shape):
            raise ShapeMismatchError('tensors[{}] {}: bad shape {!r}'
                                     .format(i, name, shape))
        if int(np.prod(shape, dtype=np.int64)) != count:
            raise ShapeMismatchError(
                'tensors[{}] {}: shape {} holds {} elements, count is {}'
                .format(i, name, shape, int(np.prod(shape)), count))
        if offset < running:
            raise OffsetOverlapError(
                'tensors[{}] {}: offset {} overlaps the previous tensor '
                'ending at {}'.format(i, name, offset, running))
        if offset > running:
            raise ManifestError('tensors[{}] {}: offset {} leaves a gap after '
                                '{}'.format(i, name, offset, running))
        running = offset + 8 * count
    return running


def _need(tensors, name):
    try:
        return tensors[name]
    except KeyError:
        raise ManifestError('tensors: missing {}'.format(name))


def _masks(manifest) -> List[HeadMask]:
    try:
        return [HeadMask.from_text(t) for t in manifest['masks']]
    except (ContainerError, ValueError, AttributeError) as e:
        raise ManifestError('masks: {}'.format(e))


def _build(manifest, tensors) -> Saveable:
    try:
        cfg = TransformerConfig.from_dict(manifest['config'])
    except (TypeError, ConfigError) as e:
        raise ManifestError('config: {}'.format(e))
    members = manifest['members']
    masks = _masks(manifest)
    heads = manifest['heads']
    if len(masks) != members or len(heads) != members:
        raise ManifestError('members: {} declared, {} masks and {} head '
                            'lists'.format(members, len(masks), len(heads)))
    for m, member_heads in enumerate(heads):
        if len(member_heads) != cfg.n_layers:
            raise ManifestError('heads[{}]: {} layers, config has {}'
                                .format(m, len(member_heads), cfg.n_layers))

    trunk = dict(
        config=cfg,
        token_embedding=_need(tensors, 'embed.token'),
        pos_embedding=_need(tensors, 'embed.pos'),
        lnf_gamma=_need(tensors, 'final_ln.gamma'),
        lnf_beta=_need(tensors, 'final_ln.beta'),
        w_cls=_need(tensors, 'classifier.W'),
        b_cls=_need(tensors, 'classifier.b'))

    if manifest['kind'] == 'model':
        if members != 1:
            raise ManifestError('members: a model has 1, got {}'
                                .format(members))
        layers = tuple(LayerWeights(
            **{attr: _need(tensors, 'layer{}.shared.{}'.format(l, name))
               for attr, name in LAYER_FIELDS},
            d_head=cfg.d_head, heads=tuple(heads[0][l]))
            for l in range(cfg.n_layers))
        return Model(layers=layers, **trunk)

    if manifest['kind'] == 'hydra':
        layers = []
        for l in range(cfg.n_layers):
            atts = tuple(MemberAttention(
                **{attr: _need(tensors,
                               'layer{}.member{}.{}'.format(l, m, name))
                   for attr, name in _MEMBER_NAMES},
                heads=tuple(heads[m][l])) for m in range(members))
            shared = {attr: _need(tensors,
                                  'layer{}.shared.{}'.format(l, name))
                      for attr, name in _SHARED_NAMES}
            layers.append(HydraLayer(members=atts, d_head=cfg.d_head,
                                     **shared))
        return HydraModel(layers=tuple(layers), masks=tuple(masks), **trunk)

    raise ManifestError('kind: expected model or hydra, got {!r}'
                        .format(manifest['kind']))
