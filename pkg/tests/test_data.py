import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from ccreid.data import (
    DatasetManifest,
    IdentityBatch,
    ManifestError,
    ManifestRecord,
    Sample,
    ParsingMask,
    generate_toy_dataset,
    held_out_outfit_split,
    load_manifest,
    load_sample,
    pk_sample,
    render_toy,
    toy_layout,
    write_manifest,
    _identity_params,
)


def _write_rows(tmp_path, rows, name="train.tsv"):
    for r in rows:
        parts = r.split("\t")
        for p in (parts[0], parts[-1]) if len(parts) == 5 else ():
            Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / p)
    path = tmp_path / name
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


def test_relabel_by_first_appearance(tmp_path):
    path = _write_rows(tmp_path, ["a.png\t7\t0\t1\tam.png", "b.png\t7\t1\t1\tbm.png", "c.png\t42\t0\t3\tcm.png"])
    m = load_manifest(path)
    assert m.labels == [0, 0, 1]
    assert [r.identity for r in m.records] == [7, 7, 42]
    assert m.split == "train"


def test_empty_manifest(tmp_path):
    path = tmp_path / "m.tsv"
    path.write_text("# only a comment\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="empty manifest"):
        load_manifest(path)


def test_short_row_named(tmp_path):
    path = _write_rows(tmp_path, ["a.png\t7\t0\t1\tam.png", "b.png\t7\t1\t1"])
    with pytest.raises(ManifestError, match="row 2"):
        load_manifest(path)


def test_missing_file_and_path(tmp_path):
    with pytest.raises(ManifestError, match="not found"):
        load_manifest(tmp_path / "nope.tsv")
    path = tmp_path / "m.tsv"
    path.write_text("ghost.png\t1\t0\t0\tghost_m.png\n", encoding="utf-8")
    with pytest.raises(ManifestError, match="missing"):
        load_manifest(path)


def test_manifest_round_trip_is_byte_identical(toy_dir, tmp_path):
    original = (toy_dir / "all.tsv").read_bytes()
    m = load_manifest(toy_dir / "all.tsv")
    out = toy_dir / "roundtrip.tsv"
    write_manifest(m, out)
    assert out.read_bytes() == original


def _manifest(ids):
    return DatasetManifest([ManifestRecord(f"{i}.png", pid, 0, pid, f"{i}m.png") for i, pid in enumerate(ids)])


def test_pk_full_batch_size():
    m = _manifest([p for p in range(20) for _ in range(10)])
    assert pk_sample(m, 16, 8, seed=0).N == 128


def test_pk_deterministic():
    m = _manifest([0, 0, 0, 1, 1, 1])
    assert pk_sample(m, 2, 2, seed=5) == pk_sample(m, 2, 2, seed=5)


def test_pk_short_identity_uses_replacement():
    m = _manifest([0, 0, 0] + [1] * 10)
    batch = pk_sample(m, 2, 8, seed=3)
    for idx, y in zip(batch.indices, batch.labels):
        assert m.labels[idx] == y
    short = [i for i, y in zip(batch.indices, batch.labels) if y == 0]
    assert len(short) == 8 and set(short) <= {0, 1, 2}


def test_pk_errors():
    m = _manifest([0, 0, 1, 1])
    with pytest.raises(ValueError):
        pk_sample(m, 3, 2, seed=0)
    with pytest.raises(ValueError):
        pk_sample(m, 2, 1, seed=0)


@settings(max_examples=1000, deadline=None)
@given(n_ids=st.integers(2, 12), P=st.integers(1, 12), K=st.integers(2, 9), seed=st.integers(0, 2**32 - 1),
       sizes=st.lists(st.integers(1, 6), min_size=12, max_size=12))
def test_pk_invariants_property(n_ids, P, K, seed, sizes):
    P = min(P, n_ids)
    ids = [pid for pid in range(n_ids) for _ in range(sizes[pid])]
    m = _manifest(ids)
    batch = pk_sample(m, P, K, seed)
    assert len(batch.indices) == P * K
    assert len(set(batch.labels)) == P
    for y in set(batch.labels):
        assert batch.labels.count(y) == K
    assert all(m.labels[i] == y for i, y in zip(batch.indices, batch.labels))


def test_identity_batch_rejects_unbalanced():
    with pytest.raises(ValueError):
        IdentityBatch([0, 1, 2, 3], [0, 0, 0, 1], 2, 2)


def test_toy_counts(tmp_path):
    m, files = generate_toy_dataset(tmp_path, n_ids=8, outfits_per_id=2, images_per_outfit=4, seed=1)
    assert len(m) == 64
    assert len({r.clothes_id for r in m.records}) == 16
    assert len(files) == 2 * 64 + 1


def test_toy_too_small(tmp_path):
    with pytest.raises(ValueError):
        generate_toy_dataset(tmp_path, image_size=(31, 16))
    with pytest.raises(ValueError):
        generate_toy_dataset(tmp_path, n_ids=1)


def _rasterize_boxes(boxes, H, W):
    """Independent rasterisation of half-open boxes by pixel-centre membership."""
    out = np.zeros((H, W), bool)
    for y0, y1, x0, x1 in boxes:
        for h in range(H):
            for w in range(W):
                if y0 <= h < y1 and x0 <= w < x1:
                    out[h, w] = True
    return out


@pytest.mark.parametrize("pid,outfit,index", [(0, 0, 0), (3, 1, 2), (5, 0, 7), (7, 1, 5)])
def test_toy_mask_matches_clothing_polygons(pid, outfit, index):
    H, W = 64, 32
    image, labels, layout = render_toy(0, pid, outfit, index, H, W)
    assert labels.shape == image.shape[:2]
    clothing = ParsingMask(labels).clothing
    np.testing.assert_array_equal(clothing, _rasterize_boxes(layout.clothing_boxes, H, W))


def test_toy_outfit_change_keeps_head_changes_clothes():
    H, W = 64, 32
    a, la, layout = render_toy(0, 2, 0, 3, H, W)
    b, lb, _ = render_toy(0, 2, 1, 3, H, W)
    np.testing.assert_array_equal(la, lb)
    y0, y1, x0, x1 = layout.head
    assert (y1 - y0) * (x1 - x0) > 0
    # head pixels identical
    np.testing.assert_array_equal(a[y0:y1, x0:x1], b[y0:y1, x0:x1])
    # everything outside clothing identical, clothing histogram differs
    cloth = ParsingMask(la).clothing
    np.testing.assert_array_equal(a[~cloth], b[~cloth])
    ha = np.histogramdd(a[cloth].reshape(-1, 3), bins=4, range=[(0, 256)] * 3)[0]
    hb = np.histogramdd(b[cloth].reshape(-1, 3), bins=4, range=[(0, 256)] * 3)[0]
    assert not np.array_equal(ha, hb)


def test_toy_deterministic(tmp_path):
    m1, _ = generate_toy_dataset(tmp_path / "a", n_ids=2, images_per_outfit=2, seed=4)
    m2, _ = generate_toy_dataset(tmp_path / "b", n_ids=2, images_per_outfit=2, seed=4)
    for r1, r2 in zip(m1.records, m2.records):
        assert (tmp_path / "a" / r1.image_path).read_bytes() == (tmp_path / "b" / r2.image_path).read_bytes()


def test_toy_layout_fits_minimum_frame():
    p = _identity_params(0, 0)
    layout = toy_layout(p, 0, 0, 32, 16)
    for box in (layout.head, layout.upper, layout.pants):
        assert box[1] > box[0] and box[3] > box[2]


def test_load_sample_alignment(toy_manifest):
    s = load_sample(toy_manifest, 0)
    assert s.image.shape == (64, 32, 3) and s.image.dtype == np.uint8
    assert s.mask.labels.shape == (64, 32)
    assert s.mask.clothing.any()
    no_mask = load_sample(toy_manifest, 0, with_mask=False)
    assert no_mask.mask is None


def test_sample_rejects_misaligned_mask():
    with pytest.raises(ValueError):
        Sample(np.zeros((4, 4, 3), np.uint8), 0, 0, 0, ParsingMask(np.zeros((4, 5), np.uint8)))


def test_mask_rejects_unknown_label():
    with pytest.raises(ValueError):
        ParsingMask(np.full((2, 2), 77, np.uint8))


def test_held_out_outfit_split(toy_manifest):
    train, query, gallery = held_out_outfit_split(toy_manifest)
    assert len(train) + len(query) + len(gallery) == len(toy_manifest)
    train_clothes = {r.clothes_id for r in train.records}
    assert not train_clothes & {r.clothes_id for r in query.records}
    assert train.num_identities == toy_manifest.num_identities
