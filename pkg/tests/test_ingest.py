import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from coordloc.filters import design_butterworth
from coordloc.ingest import NoRecordsError, ingest_sipakmed, ingest_wfdb, open_dataset
from coordloc.ingest.container import ContainerWriter
from coordloc.ingest.ecg import EcgWindow, extract_window, resample_window, window_bounds, windows_from_record
from coordloc.ingest.images import (ContourAnnotation, ContourParseError, normalize_image, pad_to_square,
                                    parse_contour_dat, polygon_centroid, preprocess_image, resample_isotropic,
                                    validate_sample, write_contour_dat)
from coordloc.ingest.wfdb import (RHYTHM, Annotation, RhythmEvent, SignalSpec, WfdbError, WfdbRecord,
                                  extract_changepoints, pack_212, parse_annotations, parse_wfdb_header,
                                  read_adc, read_signal, rhythm_events, unpack_212, write_adc,
                                  write_annotations, write_wfdb_header)

coord = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)


# ---------------------------------------------------------------- contours


def test_parse_square():
    ann = parse_contour_dat(b"0,0\n4,0\n4,4\n0,4")
    np.testing.assert_array_equal(ann.points, [[0, 0], [4, 0], [4, 4], [0, 4]])


def test_parse_errors_report_line():
    with pytest.raises(ContourParseError) as ei:
        parse_contour_dat("a,b\n1,2\n3,4")
    assert ei.value.line == 1
    with pytest.raises(ContourParseError) as ei:
        parse_contour_dat("1,2\n3,4,5\n6,7")
    assert ei.value.line == 2
    with pytest.raises(ContourParseError):
        parse_contour_dat("1,2\n3,4\n")


def test_trailing_blank_line_ignored():
    a = parse_contour_dat("1.5,2\n3,4\n5,9\n")
    b = parse_contour_dat("1.5,2\n3,4\n5,9\n\n")
    np.testing.assert_array_equal(a.points, b.points)


@given(st.lists(st.tuples(coord, coord), min_size=3, max_size=50))
def test_contour_round_trip(points):
    ann = ContourAnnotation(np.array(points))
    blob = write_contour_dat(ann)
    back = parse_contour_dat(blob)
    assert back.points.tobytes() == ann.points.tobytes()
    assert write_contour_dat(back) == blob


def test_validate_examples():
    sq = ContourAnnotation([[1, 1], [99, 1], [99, 99]])
    assert validate_sample(sq, 100, 100)
    assert not validate_sample(ContourAnnotation([[10, 10], [256, 100], [20, 30]]), 256, 256)
    assert validate_sample(ContourAnnotation([[255.0, 99], [0, 0], [10, 10]]), 100, 256)


@given(st.lists(st.tuples(st.floats(-5, 30), st.floats(-5, 30)), min_size=3, max_size=12),
       st.integers(1, 25), st.integers(1, 25))
def test_validate_matches_brute_force(points, h, w):
    inside = True
    for x, y in points:
        if x < 0 or y < 0 or x >= w or y >= h:
            inside = False
    assert validate_sample(ContourAnnotation(np.array(points)), h, w) == inside


# ---------------------------------------------------------------- centroid


def test_centroid_examples():
    cx, cy, deg = polygon_centroid(ContourAnnotation([[0, 0], [1, 0], [1, 1], [0, 1]]))
    assert (cx, cy, deg) == (0.5, 0.5, False)
    cx, cy, _ = polygon_centroid(ContourAnnotation([[0, 0], [3, 0], [0, 3]]))
    assert cx == pytest.approx(1) and cy == pytest.approx(1)


def test_centroid_orientation_independent():
    pts = np.array([[0, 0], [4, 0], [4, 1], [1, 1], [1, 3], [0, 3]], dtype=float)
    a = polygon_centroid(ContourAnnotation(pts))
    b = polygon_centroid(ContourAnnotation(pts[::-1]))
    assert a[:2] == pytest.approx(b[:2], abs=1e-12)


def test_centroid_l_hexagon_monte_carlo():
    pts = np.array([[0, 0], [4, 0], [4, 1], [1, 1], [1, 3], [0, 3]], dtype=float)
    cx, cy, _ = polygon_centroid(ContourAnnotation(pts))
    # rejection sampling over the bounding box with a scrambled Sobol sequence: inside the L iff x<1 or y<1
    from scipy.stats import qmc

    r = qmc.Sobol(2, seed=0).random_base2(21) * [4, 3]
    keep = r[(r[:, 0] < 1) | (r[:, 1] < 1)]
    assert cx == pytest.approx(keep[:, 0].mean(), abs=1e-3)
    assert cy == pytest.approx(keep[:, 1].mean(), abs=1e-3)
    # exact decomposition: 4x1 bar plus 1x2 column
    assert cx == pytest.approx((4 * 2 + 2 * 0.5) / 6, abs=1e-12)
    assert cy == pytest.approx((4 * 0.5 + 2 * 2) / 6, abs=1e-12)


def test_degenerate_polygon_falls_back():
    cx, cy, deg = polygon_centroid(ContourAnnotation([[0, 0], [1, 1], [2, 2]]))
    assert deg and (cx, cy) == (1.0, 1.0)


def test_contour_needs_three_finite_points():
    with pytest.raises(ContourParseError):
        ContourAnnotation([[0, 0], [1, 1]])
    with pytest.raises(ContourParseError):
        ContourAnnotation([[0, 0], [1, np.nan], [2, 2]])


# ---------------------------------------------------------------- image preprocessing


def test_normalize_moments(rng):
    img = rng.uniform(0, 255, (3, 40, 30))
    out, const = normalize_image(img)
    assert not const
    assert abs(out.mean()) < 1e-8
    assert abs(out.std() - 1) < 1e-6


@given(arrays(np.float64, (3, 6, 5), elements=st.floats(0, 255)), st.floats(0.1, 10), st.floats(-100, 100))
def test_normalize_affine_invariant(img, a, b):
    if img.std() < 1e-3:
        return
    np.testing.assert_allclose(normalize_image(a * img + b)[0], normalize_image(img)[0], atol=1e-6)


def test_normalize_constant_image_flagged():
    out, const = normalize_image(np.full((3, 4, 4), 7.0))
    assert const and np.all(out == 0)


def test_resample_examples(rng):
    out, s = resample_isotropic(rng.standard_normal((3, 512, 384)))
    assert out.shape == (3, 256, 192) and s == 0.5
    img = rng.standard_normal((3, 256, 100))
    out, s = resample_isotropic(img)
    assert out.shape == img.shape and s == 1.0
    out, _ = resample_isotropic(np.full((3, 300, 120), 2.5))
    np.testing.assert_allclose(out, 2.5)


def test_resample_maps_points_by_scale():
    # a single bright pixel moves from p to p*s under the o -> o/s sampling rule
    img = np.zeros((1, 64, 64))
    img[0, 20, 40] = 1
    out, s = resample_isotropic(img, 128)
    r, c = np.unravel_index(out[0].argmax(), out[0].shape)
    assert (r, c) == (round(20 * s), round(40 * s))


def test_pad_examples(rng):
    out, (ph, pw) = pad_to_square(rng.standard_normal((3, 256, 192)))
    assert (ph, pw) == (0, 32)
    assert not out[:, :, :32].any() and not out[:, :, 224:].any()
    out, (ph, pw) = pad_to_square(np.ones((3, 191, 256)))
    assert (ph, pw) == (32, 0)
    assert out[:, 32:223].all() and not out[:, 223:].any()
    with pytest.raises(ValueError):
        pad_to_square(np.ones((3, 257, 10)))


def test_preprocess_invariants(rng):
    img = rng.uniform(0, 255, (3, 300, 200))
    ann = ContourAnnotation([[50, 60], [150, 60], [150, 260], [50, 260]])
    s = preprocess_image(img, ann, "b")
    assert s.pixels.shape == (3, 256, 256)
    s_ = 256 / 300
    pw = (256 - round(200 * s_)) // 2
    assert s.center == pytest.approx((100 * s_ + pw, 160 * s_))
    assert np.all(np.isfinite(s.pixels))
    assert abs(normalize_image(img)[0].mean()) < 1e-6


# ---------------------------------------------------------------- WFDB headers and signals


def test_header_example():
    text = "r01 2 250 5000\nr01.dat 212 200 11 1024 0 0 0 lead I\nr01.dat 212 200 11 1024 0 0 0 lead II\n"
    rec = parse_wfdb_header(text)
    assert rec.n_signals == 2 and rec.fs == 250 and rec.n_samples == 5000
    assert rec.signals[0].fmt == 212 and rec.signals[0].gain == 200 and rec.signals[0].baseline == 1024
    with pytest.raises(WfdbError):
        parse_wfdb_header("r01 1 250 10\nr01.dat 310 200 11 0 0 0 0\n")
    with pytest.raises(WfdbError):
        parse_wfdb_header("r01 2 250 10\nr01.dat 212 200 11 0 0 0 0\n")


def test_header_gain_baseline_units():
    rec = parse_wfdb_header("# comment\nx 1 360.5 100\nx.dat 16 150.25(-7)/uV 16 0 0 0 0\n")
    s = rec.signals[0]
    assert (rec.fs, s.gain, s.baseline, s.units) == (360.5, 150.25, -7, "uV")


def header_strategy():
    fmt = st.sampled_from([212, 16])
    sig = st.builds(SignalSpec, file_name=st.just("rec.dat"), fmt=fmt,
                    gain=st.one_of(st.integers(1, 2000).map(float), st.floats(0.5, 1000).map(lambda v: round(v, 3))),
                    baseline=st.integers(-1000, 1000), units=st.sampled_from(["mV", "uV"]),
                    adc_res=st.integers(8, 16), adc_zero=st.integers(-512, 512), init_value=st.integers(-100, 100),
                    checksum=st.integers(-32768, 32767), block_size=st.just(0),
                    description=st.sampled_from(["", "ECG", "lead V1"]))
    return st.builds(lambda n, fs, ns, specs: WfdbRecord("rec", len(specs), fs, ns, specs),
                     st.just(0), st.sampled_from([125.0, 250.0, 360.0, 128.5]), st.integers(1, 10 ** 6),
                     st.lists(sig, min_size=1, max_size=3))


@given(header_strategy())
def test_header_round_trip(rec):
    text = write_wfdb_header(rec)
    back = parse_wfdb_header(text)
    assert back == rec
    assert write_wfdb_header(back) == text


def test_212_examples():
    np.testing.assert_array_equal(unpack_212(bytes([0x01, 0x00, 0x02]), 2), [1, 2])
    np.testing.assert_array_equal(unpack_212(bytes([0xFF, 0x0F, 0x00]), 2), [-1, 0])
    np.testing.assert_array_equal(unpack_212(bytes([0x00, 0x88, 0x00]), 2), [-2048, -2048])
    with pytest.raises(WfdbError):
        unpack_212(bytes(4), 2)
    with pytest.raises(WfdbError):
        unpack_212(bytes(3), 4)


def _oracle_212(values):
    # bit-by-bit reference packer
    out = bytearray()
    v = list(values) + ([0] if len(values) % 2 else [])
    for a, b in zip(v[0::2], v[1::2]):
        a &= 0xFFF
        b &= 0xFFF
        out += bytes([a & 0xFF, (a >> 8) | ((b >> 8) << 4), b & 0xFF])
    return bytes(out)


@given(st.lists(st.integers(-2048, 2047), max_size=64))
def test_212_pack_matches_oracle_and_round_trips(values):
    blob = pack_212(np.array(values, dtype=np.int64))
    assert blob == _oracle_212(values)
    np.testing.assert_array_equal(unpack_212(blob, len(values)), values)


@pytest.mark.parametrize("fmt,lo,hi", [(212, -2048, 2047), (16, -32768, 32767)])
def test_signal_round_trip_and_physical_units(fmt, lo, hi, rng):
    adc = rng.integers(lo, hi + 1, size=(2, 501))
    rec = WfdbRecord("r", 2, 250.0, 501, [SignalSpec("r.dat", fmt, 200.0, 5), SignalSpec("r.dat", fmt, 100.0, -3)])
    raw = write_adc(adc, fmt)
    np.testing.assert_array_equal(read_adc(raw, rec), adc)
    assert write_adc(read_adc(raw, rec), fmt) == raw
    sig = read_signal(raw, rec)
    np.testing.assert_allclose(sig[0], (adc[0] - 5) / 200.0)
    np.testing.assert_allclose(sig[1], (adc[1] + 3) / 100.0)
    with pytest.raises(WfdbError):
        read_adc(raw[:-6], rec)


def test_format16_is_little_endian_interleaved():
    rec = WfdbRecord("r", 2, 1.0, 2, [SignalSpec("r.dat", 16), SignalSpec("r.dat", 16)])
    raw = bytes([0x01, 0x00, 0xFF, 0xFF, 0x00, 0x01, 0x02, 0x00])
    np.testing.assert_array_equal(read_adc(raw, rec), [[1, 256], [-1, 2]])


# ---------------------------------------------------------------- annotations


def test_single_rhythm_annotation():
    aux = b"(VT"
    words = [(RHYTHM << 10) | 250, (63 << 10) | len(aux)]
    raw = np.array(words, dtype="<u2").tobytes() + aux + b"\x00" + b"\x00\x00"
    anns = parse_annotations(raw)
    ev = rhythm_events(anns)
    assert len(ev) == 1 and ev[0].sample_index == 250 and ev[0].label == "(VT" and ev[0].is_dangerous
    assert not RhythmEvent(0, "(N").is_dangerous


def test_annotation_errors():
    words = [(RHYTHM << 10) | 5, (63 << 10) | 10]
    with pytest.raises(WfdbError):
        parse_annotations(np.array(words, dtype="<u2").tobytes() + b"ab")
    with pytest.raises(WfdbError):
        parse_annotations(np.array([(1 << 10) | 900, 0], dtype="<u2").tobytes(), n_samples=500)


ann_strategy = st.builds(
    Annotation, sample=st.integers(0, 5000), code=st.integers(1, 49), subtype=st.integers(0, 100),
    chan=st.integers(0, 3), num=st.integers(-5, 5),
    aux=st.one_of(st.just(b""), st.sampled_from([b"(N", b"(VT", b"(VFL", b"(AFIB", b"(ASYS"]),
                  st.binary(min_size=1, max_size=20).filter(lambda b: not b.endswith(b"\x00"))))


@given(st.lists(ann_strategy, max_size=100))
def test_annotation_round_trip(anns):
    anns = sorted(anns, key=lambda a: a.sample)
    raw = write_annotations(anns)
    assert parse_annotations(raw) == anns
    assert write_annotations(parse_annotations(raw)) == raw


def test_large_gap_uses_skip():
    anns = [Annotation(100_000, 1), Annotation(100_001, RHYTHM, aux=b"(VF")]
    raw = write_annotations(anns)
    assert int(np.frombuffer(raw, "<u2")[0]) >> 10 == 59
    assert parse_annotations(raw) == anns


def _events(*labels, step=1000):
    return [RhythmEvent(i * step, "(" + lab) for i, lab in enumerate(labels)]


def test_changepoint_rules():
    assert extract_changepoints(_events("N", "VT")) == [1000]
    assert extract_changepoints(_events("N", "VT", "VFIB")) == [1000, 2000]
    assert extract_changepoints(_events("VT")) == [0]
    assert extract_changepoints(_events("VT", "VT", "N", "VT")) == [0, 3000]
    assert extract_changepoints(_events("N", "AFIB", "B")) == []


# ---------------------------------------------------------------- ECG windows


FS = 250


def test_isolated_changepoint_window():
    sig = np.tile(np.arange(400 * FS, dtype=float), (2, 1))
    w = extract_window(sig, FS, 300 * FS)
    assert w.changepoint_s == 10.0 and w.n == 20 * FS
    assert w.signal[0, 0] == 290 * FS and w.signal[0, -1] == 310 * FS - 1
    assert w.valid.all()


def test_prior_changepoint_moves_start():
    sig = np.tile(np.arange(400 * FS, dtype=float), (2, 1))
    w = extract_window(sig, FS, 300 * FS, [295 * FS])
    assert w.changepoint_s == 5.0
    assert w.signal[0, 0] == 295 * FS and w.signal[0, -1] == 315 * FS - 1
    assert window_bounds(FS, 300 * FS, [100 * FS, 290 * FS]) == (300 * FS - 2500, 10.0)
    assert window_bounds(FS, 300 * FS, [280 * FS, 296 * FS])[1] == 4.0


def test_record_edge_zero_padding():
    sig = np.ones((2, 60 * FS))
    w = extract_window(sig, FS, 3 * FS)
    assert w.changepoint_s == 10.0
    assert not w.signal[:, :7 * FS].any() and not w.valid[:7 * FS].any()
    assert w.signal[:, 7 * FS:].all() and w.valid[7 * FS:].all()
    w = extract_window(sig, FS, 55 * FS)
    assert not w.signal[:, 15 * FS:].any() and w.signal[:, :15 * FS].all()


def test_changepoint_outside_record_raises():
    with pytest.raises(ValueError):
        extract_window(np.ones((2, 100)), FS, 100)


def test_resample_constant_and_length():
    w = EcgWindow(np.full((2, 20 * FS), 3.0), 10.0, "c", fs=FS)
    r = resample_window(w)
    assert r.signal.shape == (2, 500) and r.fs == 25 and r.changepoint_s == 10.0
    np.testing.assert_allclose(r.signal, 3.0, rtol=1e-9)


def test_resample_keeps_1hz_sinusoid():
    t = np.arange(20 * FS) / FS
    w = EcgWindow(np.stack([np.sin(2 * np.pi * t)] * 2), 4.0, "s", fs=FS)
    r = resample_window(w)
    to = np.arange(500) / 25
    core = slice(50, 450)
    np.testing.assert_allclose(r.signal[0, core], np.sin(2 * np.pi * to[core]), atol=0.02)
    amp = np.abs(np.fft.rfft(r.signal[0]))[20] / 250
    assert abs(amp - 1) < 0.02


def test_resample_attenuates_60hz():
    t = np.arange(20 * FS) / FS
    w = EcgWindow(np.stack([np.sin(2 * np.pi * 60 * t)] * 2), 4.0, "s", fs=FS)
    r = resample_window(w)
    assert 20 * np.log10(np.sqrt(np.mean(r.signal ** 2)) / np.sqrt(0.5)) < -40
    h = design_butterworth("lowpass", 8, 10.0, FS).response(np.array([60.0]))
    assert 20 * np.log10(abs(h[0]) ** 2) < -40  # forward-backward pass squares the gain


def test_resample_rejects_low_rate():
    with pytest.raises(ValueError):
        resample_window(EcgWindow(np.zeros((2, 200)), 1.0, "x", fs=10))


def test_resample_non_integer_ratio():
    fs = 360
    w = EcgWindow(np.ones((2, 20 * fs)), 7.5, "m", fs=fs)
    r = resample_window(w)
    assert r.signal.shape == (2, 500)
    np.testing.assert_allclose(r.signal, 1.0, rtol=1e-9)


@given(st.lists(st.integers(0, 120 * FS - 1), min_size=1, max_size=6, unique=True))
def test_window_invariants(cps):
    sig = np.random.default_rng(0).standard_normal((2, 120 * FS))
    for w in windows_from_record(sig, FS, sorted(cps), "r"):
        assert 0 <= w.changepoint_s <= 20 and w.signal.shape == (2, 500)


# ---------------------------------------------------------------- container and directory ingest


def test_container_round_trip(tmp_path, rng):
    arrs = rng.standard_normal((4, 2, 500)).astype(np.float32)
    with ContainerWriter(tmp_path / "c", "ecg", (2, 500)) as wr:
        for i, a in enumerate(arrs):
            wr.add(a, [i + 0.5], f"b{i // 2}", i % 2)
    d = open_dataset(tmp_path / "c")
    assert len(d) == 4 and d.task == "ecg"
    np.testing.assert_array_equal(np.asarray(d.arrays), arrs)
    assert d.base_ids == ["b0", "b0", "b1", "b1"]
    lines = (tmp_path / "c" / "manifest.jsonl").read_text().splitlines()
    assert json.loads(lines[1]) == dict(base_id="b0", augment_index=1, target=[1.5], offset=4000)
    with pytest.raises(FileExistsError):
        ContainerWriter(tmp_path / "c", "ecg", (2, 500))
    assert not (tmp_path / "c.partial").exists()


def test_container_failed_write_leaves_nothing(tmp_path):
    with pytest.raises(RuntimeError):
        with ContainerWriter(tmp_path / "c", "ecg", (2, 500)) as wr:
            wr.add(np.zeros((2, 500)), [1.0], "a", 0)
            raise RuntimeError("boom")
    assert not (tmp_path / "c").exists() and not (tmp_path / "c.partial").exists()


def _write_png(path, arr):
    from PIL import Image

    Image.fromarray(arr.astype(np.uint8)).save(path)


def test_ingest_sipakmed_directory(tmp_path, rng):
    src = tmp_path / "src"
    src.mkdir()
    _write_png(src / "c1.bmp", rng.integers(0, 255, (80, 60, 3)))
    (src / "c1_nuc.dat").write_text("10,10\n30,10\n30,40\n10,40\n")
    _write_png(src / "c2.bmp", rng.integers(0, 255, (50, 50, 3)))
    (src / "c2_nuc.dat").write_text("10,10\n60,10\n30,40\n")
    _write_png(src / "c3.bmp", rng.integers(0, 255, (50, 50, 3)))
    (src / "c3_nuc.dat").write_text("oops\n")
    rep = ingest_sipakmed(src, tmp_path / "out", augment=2, seed=1)
    assert rep.written == 3
    assert rep.excluded == [("c2.bmp", "contour outside image bounds")]
    assert [f[0] for f in rep.failures] == ["c3.bmp"]
    d = open_dataset(tmp_path / "out")
    assert d.arrays.shape == (3, 3, 256, 256)
    s = 256 / 80
    np.testing.assert_allclose(d.targets[0], [20 * s + (256 - round(60 * s)) // 2, 25 * s], rtol=1e-6)


def test_ingest_empty_directory(tmp_path):
    with pytest.raises(NoRecordsError, match="no records found"):
        ingest_sipakmed(tmp_path, tmp_path / "o")
    with pytest.raises(NoRecordsError, match="no records found"):
        ingest_wfdb(tmp_path, tmp_path / "o")


def write_record(dirpath, name, adc, fs, anns, fmt=212):
    rec = WfdbRecord(name, adc.shape[0], float(fs), adc.shape[1],
                     [SignalSpec(f"{name}.dat", fmt, 200.0, 0) for _ in range(adc.shape[0])])
    (dirpath / f"{name}.hea").write_text(write_wfdb_header(rec))
    (dirpath / f"{name}.dat").write_bytes(write_adc(adc, fmt))
    (dirpath / f"{name}.atr").write_bytes(write_annotations(anns))


def test_ingest_wfdb_directory(tmp_path, rng):
    fs = 250
    adc = rng.integers(-500, 500, size=(2, 120 * fs))
    anns = [Annotation(0, RHYTHM, aux=b"(N"), Annotation(30 * fs, RHYTHM, aux=b"(VT"),
            Annotation(36 * fs, RHYTHM, aux=b"(VFL"), Annotation(80 * fs, RHYTHM, aux=b"(N"),
            Annotation(118 * fs, RHYTHM, aux=b"(ASYS")]
    write_record(tmp_path, "rec1", adc, fs, anns)
    rep = ingest_wfdb(tmp_path, tmp_path / "out")
    d = open_dataset(tmp_path / "out")
    assert rep.written == 3 and rep.failures == []
    np.testing.assert_allclose(d.targets[:, 0], [10.0, 6.0, 10.0])
    assert d.base_ids == ["rec1_7500", "rec1_9000", "rec1_29500"]
    # the edge window ends 2 s past the record, so its tail is zero
    assert np.all(d.arrays[2][:, -40:] == 0)
