import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pztrigger import camera, fixedpoint as fx, modelsel, pzernike, svm
from pztrigger.errors import DataFormatError, ExportRangeError, InvalidArgument
from conftest import labels_to_y

Q16 = fx.QFormat(32, 16)
Q8_24 = fx.QFormat(32, 24)


def test_qformat_basics():
    assert Q16.ulp == 2.0**-16 and Q16.int_bits == 16
    assert Q16.max_raw == 2**31 - 1 and Q16.min_raw == -(2**31)
    assert fx.QFormat.parse("Q24.8") == fx.QFormat(32, 8)
    assert fx.QFormat.parse("uq1.15") == fx.QFormat(16, 15, signed=False)
    assert str(fx.QFormat(32, 8)) == "q24.8"
    for bad in ("q16", "16.16", "q0.0"):
        with pytest.raises(InvalidArgument):
            fx.QFormat.parse(bad)
    with pytest.raises(InvalidArgument):
        fx.QFormat(12, 4)


def test_to_fixed_examples():
    assert fx.to_fixed(1.0, Q16) == 65536
    assert fx.to_fixed(2.0**20, Q16) == Q16.max_raw
    assert fx.to_fixed(-(2.0**20), Q16) == Q16.min_raw
    r = fx.to_fixed(0.1, Q16)
    assert r == 6554
    assert abs(fx.from_fixed(r, Q16) - 0.1) <= 2.0**-17
    # ties go to even
    assert fx.to_fixed(2.5 * 2.0**-16, Q16) == 2
    assert fx.to_fixed(3.5 * 2.0**-16, Q16) == 4
    with pytest.raises(InvalidArgument):
        fx.to_fixed(math.nan, Q16)


@settings(max_examples=300)
@given(st.floats(-30000, 30000, allow_nan=False))
def test_quantization_error_at_most_half_ulp(v):
    assert abs(fx.from_fixed(fx.to_fixed(v, Q16), Q16) - v) <= 0.5 * Q16.ulp


@pytest.mark.parametrize("x,s", [(5, 1), (6, 2), (7, 1), (-5, 1), (-7, 1), (10, 0), (3, -2)])
def test_rshift_rne_matches_round(x, s):
    assert fx.rshift_rne(x, s) == round(x / 2**s)


def test_fx_mul_examples():
    one = fx.to_fixed(1.0, Q16)
    half = fx.to_fixed(0.5, Q16)
    for v in (0.0, 1.5, -3.25, 1234.5):
        a = fx.to_fixed(v, Q16)
        assert fx.fx_mul(a, one, Q16) == a
    assert fx.fx_mul(half, half, Q16) == fx.to_fixed(0.25, Q16)
    big = fx.to_fixed(30000.0, Q16)
    assert fx.fx_mul(big, big, Q16) == Q16.max_raw
    assert fx.fx_mul(big, -big, Q16) == Q16.min_raw


def test_fx_sqrt_examples():
    assert fx.fx_sqrt(fx.to_fixed(4.0, Q16), Q16) == fx.to_fixed(2.0, Q16)
    assert fx.fx_sqrt(0, Q16) == 0
    r = fx.from_fixed(fx.fx_sqrt(fx.to_fixed(2.0, Q16), Q16), Q16)
    assert 0 <= math.sqrt(2.0) - r < Q16.ulp
    with pytest.raises(InvalidArgument):
        fx.fx_sqrt(-1, Q16)


@settings(max_examples=500)
@given(st.integers(0, 2**128))
def test_isqrt_invariant(n):
    q = fx.isqrt_nonrestoring(n)
    assert q * q <= n < (q + 1) * (q + 1)
    assert q == math.isqrt(n)


def test_isqrt_small_exhaustive():
    assert all(fx.isqrt_nonrestoring(n) == math.isqrt(n) for n in range(5000))


def test_exp_examples():
    assert abs(fx.fx_exp_neg(0, Q8_24) - fx.to_fixed(1.0, Q8_24)) <= 1
    r = fx.from_fixed(fx.fx_exp_neg(fx.to_fixed(math.log(2.0), Q8_24), Q8_24), Q8_24)
    assert abs(r - 0.5) <= 2.0**-12
    assert fx.fx_exp_neg(fx.to_fixed(40.0, Q8_24), Q8_24) == 0
    with pytest.raises(InvalidArgument):
        fx.fx_exp_neg(-1, Q8_24)


def test_exp_monotone_across_lut_segments():
    # every LUT segment boundary in the first two octaves, one raw step either side
    step = math.log(2.0) / fx.LUT_SIZE
    prev = None
    for j in range(2 * fx.LUT_SIZE + 1):
        c = fx.to_fixed(j * step, Q8_24)
        for u in (c - 1, c, c + 1):
            if u < 0:
                continue
            v = fx.fx_exp_neg(u, Q8_24)
            if prev is not None and u >= prev[0]:
                assert v <= prev[1]
            prev = (u, v)


@settings(max_examples=300)
@given(st.integers(0, 2**31 - 2), st.integers(1, 2**20))
def test_exp_monotone_property(u, du):
    assert fx.fx_exp_neg(u + du, Q8_24) <= fx.fx_exp_neg(u, Q8_24)


@settings(max_examples=300)
@given(st.floats(0, 30))
def test_exp_within_analytic_bound(x):
    u = fx.to_fixed(x, Q8_24)
    got = fx.from_fixed(fx.fx_exp_neg(u, Q8_24), Q8_24)
    exact = math.exp(-fx.from_fixed(u, Q8_24))
    assert abs(got - exact) <= fx.exp_neg_error_bound(Q8_24)


def test_auto_dual_format():
    assert fx.auto_dual_format(28526.2) == fx.QFormat(32, 15)
    assert fx.auto_dual_format(0.5) == fx.QFormat(32, 30)
    with pytest.raises(InvalidArgument):
        fx.auto_dual_format(2.0**40)


@pytest.fixture(scope="module")
def trained(table, small_events, geom):
    clean = [camera.clean_image(e, geom) for e in small_events]
    X = pzernike.extract_many(clean, table)
    norm = modelsel.zscore_fit(X)
    data = svm.LabeledDataset(norm.apply(X), labels_to_y(small_events))
    model = svm.train_smo(data, 4.0, 0.05, normalizer=norm)
    return model, clean


def test_export_round_trip_within_half_ulp(trained, table):
    model, _ = trained
    img = fx.export_trigger(model, table)
    for name, src in (("dual_coeffs", model.dual_coeffs),
                      ("support_vectors", model.support_vectors.ravel()),
                      ("norm_mean", model.normalizer.mean),
                      ("basis", np.stack([table.re, table.im], axis=-1).ravel())):
        back = img.dequantized(name).astype(float)
        assert np.all(np.abs(back - src) <= 0.5 * img.table_format(name).ulp)
    assert img.n_sv == model.n_support
    assert all(v == 0 for v in img.saturation.values())


def test_export_is_deterministic_and_serialises(trained, table):
    model, _ = trained
    a = fx.export_trigger(model, table).to_bytes()
    b = fx.export_trigger(model, table).to_bytes()
    assert a == b and a[:4] == b"PZTR"
    back = fx.TriggerImage.from_bytes(a)
    assert back.to_bytes() == a
    assert back.formats == fx.export_trigger(model, table).formats
    with pytest.raises(DataFormatError):
        fx.TriggerImage.from_bytes(b"XXXX" + a[4:])
    with pytest.raises(DataFormatError):
        fx.TriggerImage.from_bytes(a[:-3])
    with pytest.raises(DataFormatError):
        fx.TriggerImage.from_bytes(a + b"\0")


def test_export_refuses_bad_models(trained, table):
    model, _ = trained
    with pytest.raises(InvalidArgument):
        fx.export_trigger(svm.SvmModel(**{**model.__dict__, "converged": False}), table)
    with pytest.raises(InvalidArgument):
        fx.export_trigger(svm.SvmModel(**{**model.__dict__, "normalizer": None}), table)


def test_dual_range_error_names_table(trained, table):
    model, _ = trained
    big = model.dual_coeffs.copy()
    big[0] = 28526.2 * np.sign(big[0])
    wide = svm.SvmModel(**{**model.__dict__, "dual_coeffs": big, "C": 28526.2})
    with pytest.raises(ExportRangeError) as err:
        fx.export_trigger(wide, table, fx.TriggerFormats(dual_coeffs=fx.QFormat(32, 16)))
    assert err.value.table == "dual_coeffs"
    assert "dual_coeffs" in str(err.value)
    img = fx.export_trigger(wide, table, fx.TriggerFormats(dual_coeffs=fx.QFormat(32, 8)))
    assert img.formats.dual_coeffs == fx.QFormat(32, 8)
    auto = fx.export_trigger(wide, table, fx.TriggerFormats(dual_coeffs=None))
    assert auto.formats.dual_coeffs == fx.QFormat(32, 15)


def test_zero_image_agrees(trained, table):
    model, _ = trained
    img = fx.export_trigger(model, table)
    pipe = fx.FxPipeline(img)
    res = pipe.run([0] * table.n_pixels, keep_features=True)
    assert res.features_raw == [0] * img.n_features
    f = svm.decision_values(model, np.zeros((1, img.n_features)), raw=True)[0]
    assert res.label == svm.sign_label(f)
    assert abs(res.decision - f) <= fx.decision_error_bound(img, model, table,
                                                           np.zeros(table.n_pixels))
    with pytest.raises(InvalidArgument):
        pipe.run([0] * 3)


def test_fixed_features_match_float(trained, table):
    model, clean = trained
    img = fx.export_trigger(model, table)
    pipe = fx.FxPipeline(img)
    for ev in clean[:5]:
        raw, sat = pipe.quantize_pixels(ev.pixel_phe)
        res = pipe.run(raw, keep_features=True)
        want = pzernike.extract_features(ev, table)
        got = np.array([fx.from_fixed(v, img.formats.features) for v in res.features_raw])
        assert not sat
        assert np.allclose(got, want, atol=1e-3)


def test_agreement_and_error_bound(trained, table):
    model, clean = trained
    img = fx.export_trigger(model, table)
    rep = fx.agreement_report(model, img, table, clean, with_bound=True)
    assert rep.n_events == len(clean)
    assert rep.agreement == 1.0
    assert rep.saturated_events == 0
    assert rep.bound_violations == 0
    assert rep.max_abs_err < 0.01
    lines = rep.to_csv().splitlines()
    assert lines[0] == ("event_id,float_decision,fx_decision,abs_err,label_float,label_fx,"
                        "saturated")
    assert len(lines) == len(clean) + 1
    s = rep.summary()
    assert s["events"] == len(clean) and s["mismatches"] == 0


def test_wide_formats_are_closer(trained, table):
    model, clean = trained
    narrow = fx.agreement_report(model, fx.export_trigger(model, table), table, clean[:6])
    wide = fx.agreement_report(model, fx.export_trigger(model, table, fx.wide_formats()),
                               table, clean[:6], with_bound=True)
    assert wide.max_abs_err <= narrow.max_abs_err
    assert wide.bound_violations == 0
    # with 40 fraction bits the exp interpolation dominates what is left
    lut_err = fx.exp_neg_error_bound(fx.wide_formats().exp_input, fx.wide_formats().exp_lut)
    assert wide.max_abs_err <= np.abs(model.dual_coeffs).sum() * lut_err


def test_empty_agreement_report(trained, table):
    model, _ = trained
    rep = fx.agreement_report(model, fx.export_trigger(model, table), table, [])
    assert rep.n_events == 0 and rep.agreement == 1.0 and rep.max_abs_err == 0.0
    assert rep.to_csv().count("\n") == 1


def test_saturating_pixels_are_flagged(trained, table):
    model, _ = trained
    img = fx.export_trigger(model, table)
    pix = np.zeros(table.n_pixels)
    pix[0] = 1e6
    rep = fx.agreement_report(model, img, table, [camera.CherenkovImage(pix)])
    assert rep.saturated_events == 1
