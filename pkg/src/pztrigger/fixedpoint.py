"""Bit-exact fixed-point emulation of the trigger decision path.

All arithmetic is on Python integers (or ``int64`` arrays when a static bound
shows the result cannot overflow; both give identical integers).  Rounding is
round-half-to-even and every narrowing step saturates instead of wrapping.

Evaluation order for one event (straight-line, fixed order):

1.  moments:    acc = sum_p pix[p] * basis[p, k]      exact, then -> accumulator -> feature
2.  magnitude:  f = isqrt(re^2 + im^2)                  bit-by-bit, floor
3.  normalise:  x = (f - mean) * inv_std                -> normalized
4.  kernel:     u = gamma * sum_k (x_k - sv_ik)^2       exact, then -> exp input
                k_i = exp_neg(u)                        LUT + interpolation
5.  decision:   d = sum_i coef_i * k_i + bias           exact, then -> accumulator

Error budget.  ``decision_error_bound`` propagates, per event, the
half-ulp quantisation of every table, the rounding at every narrowing
step, the floor of the square root (1 ulp), and the exponential's own
error (LUT entry half-ulp + linear interpolation h^2/8 with
h = ln2/256 + 1 output ulp) through the pipeline to a bound on
|fixed decision - float decision|.  Saturation anywhere voids the bound
and sets the event's sticky flag.
"""

from __future__ import annotations

import csv
import io
import math
import re
import struct
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import DataFormatError, ExportRangeError, InvalidArgument
from .pzernike import BasisTable, n_features
from .svm import SvmModel, decision_values, sign_label

TRIGGER_MAGIC = b"PZTR"
LUT_SIZE = 256
_LN2_FRAC = 96  # fraction bits of the internal ln2 constant
_INTERP_GUARD = 32


@dataclass(frozen=True)
class QFormat:
    """Two's complement (or unsigned) fixed point with ``frac_bits`` fraction bits."""

    total_bits: int
    frac_bits: int
    signed: bool = True

    def __post_init__(self):
        if not 0 < self.frac_bits < self.total_bits:
            raise InvalidArgument(f"need 0 < frac_bits < total_bits, got {self}")
        if self.total_bits % 8:
            raise InvalidArgument("total_bits must be a multiple of 8")

    @property
    def int_bits(self) -> int:
        return self.total_bits - self.frac_bits

    @property
    def min_raw(self) -> int:
        return -(1 << (self.total_bits - 1)) if self.signed else 0

    @property
    def max_raw(self) -> int:
        return (1 << (self.total_bits - (1 if self.signed else 0))) - 1

    @property
    def ulp(self) -> float:
        return 2.0 ** -self.frac_bits

    @property
    def max_value(self) -> float:
        return self.max_raw / 2.0**self.frac_bits

    @property
    def min_value(self) -> float:
        return self.min_raw / 2.0**self.frac_bits

    def __str__(self):
        return f"{'' if self.signed else 'u'}q{self.int_bits}.{self.frac_bits}"

    @classmethod
    def parse(cls, text: str) -> "QFormat":
        """Parse ``q16.16`` / ``Q24.8`` / ``uq1.15`` (integer bits include the sign bit)."""
        m = re.fullmatch(r"\s*(u?)q(\d+)\.(\d+)\s*", text.lower())
        if not m:
            raise InvalidArgument(f"bad Q-format {text!r}, expected e.g. q16.16")
        i, f = int(m.group(2)), int(m.group(3))
        return cls(i + f, f, signed=not m.group(1))


def saturate(raw: int, q: QFormat) -> tuple[int, bool]:
    if raw > q.max_raw:
        return q.max_raw, True
    if raw < q.min_raw:
        return q.min_raw, True
    return raw, False


def to_fixed(v: float, q: QFormat) -> int:
    """Round-half-even of ``v * 2**frac_bits``, saturated to the format."""
    if math.isnan(v):
        raise InvalidArgument("cannot quantise NaN")
    if math.isinf(v):
        return q.max_raw if v > 0 else q.min_raw
    return saturate(round(math.ldexp(v, q.frac_bits)), q)[0]


def from_fixed(raw, q: QFormat):
    if isinstance(raw, np.ndarray):
        return np.array([math.ldexp(int(r), -q.frac_bits) for r in raw.ravel()]).reshape(raw.shape)
    return math.ldexp(int(raw), -q.frac_bits)


def quantize_array(values, q: QFormat) -> tuple[np.ndarray, int]:
    """Quantise an array; returns (object array of ints, number of saturated entries)."""
    v = np.asarray(values, dtype=float)
    flat = []
    sat = 0
    for x in v.ravel():
        if math.isnan(x):
            raise InvalidArgument("cannot quantise NaN")
        r = q.max_raw if x == math.inf else q.min_raw if x == -math.inf else round(
            math.ldexp(float(x), q.frac_bits))
        r, s = saturate(r, q)
        sat += s
        flat.append(r)
    out = np.empty(len(flat), dtype=object)
    out[:] = flat
    return out.reshape(v.shape), sat


def rshift_rne(x: int, s: int) -> int:
    """``x / 2**s`` rounded half-to-even (left shift for negative ``s``)."""
    if s <= 0:
        return x << -s
    q = x >> s
    rem = x - (q << s)
    half = 1 << (s - 1)
    if rem > half or (rem == half and q & 1):
        q += 1
    return q


def requantize(raw: int, from_frac: int, q: QFormat) -> tuple[int, bool]:
    return saturate(rshift_rne(raw, from_frac - q.frac_bits), q)


def fx_mul(a: int, b: int, q: QFormat) -> int:
    """Product of two raw values in format ``q``: double-width, RNE, saturate."""
    return saturate(rshift_rne(a * b, q.frac_bits), q)[0]


def isqrt_nonrestoring(n: int) -> int:
    """floor(sqrt(n)) by the non-restoring digit recurrence (two radicand bits per step)."""
    if n < 0:
        raise InvalidArgument("square root of a negative integer")
    steps = (n.bit_length() + 1) // 2
    q = 0
    r = 0
    for i in range(steps - 1, -1, -1):
        pair = (n >> (2 * i)) & 3
        if r >= 0:
            r = ((r << 2) | pair) - ((q << 2) | 1)
        else:
            r = ((r << 2) | pair) + ((q << 2) | 3)
        q = (q << 1) | (1 if r >= 0 else 0)
    return q


def fx_sqrt(a: int, q: QFormat) -> int:
    """Square root of a raw value; radicand ``a << frac_bits`` keeps the result in ``q``."""
    if a < 0:
        raise InvalidArgument("fx_sqrt of a negative value")
    return saturate(isqrt_nonrestoring(a << q.frac_bits), q)[0]


DEFAULT_LUT_FORMAT = QFormat(16, 15, signed=False)


def make_exp_lut(lut_q: QFormat = DEFAULT_LUT_FORMAT, size: int = LUT_SIZE) -> list[int]:
    """``exp(-j * ln2 / size)`` for j < size, rounded into ``lut_q``."""
    return [to_fixed(math.exp(-j * math.log(2.0) / size), lut_q) for j in range(size)]


def _ln2_wide() -> int:
    # exact integer ln2 * 2**96 from a decimal expansion (float ln2 has only 53 bits)
    from decimal import Decimal, getcontext

    getcontext().prec = 60
    return int((Decimal(2).ln() * (Decimal(2) ** _LN2_FRAC)).to_integral_value())


_LN2_WIDE = _ln2_wide()


def fx_exp_neg(u: int, q: QFormat, lut: Optional[list] = None,
               lut_q: QFormat = DEFAULT_LUT_FORMAT) -> int:
    """``exp(-u)`` for raw ``u >= 0`` in format ``q``.

    u = k*ln2 + r with 0 <= r < ln2; exp(-r) from the LUT with linear
    interpolation between entry j and j+1 (the entry past the end is
    ``lut[0] >> 1``); the result is shifted right by k.  Zero once
    k >= frac_bits + 1.
    """
    if u < 0:
        raise InvalidArgument("fx_exp_neg needs u >= 0")
    if lut is None:
        lut = _default_lut()
    size = len(lut)
    uw = u << (_LN2_FRAC - q.frac_bits)
    k, r = divmod(uw, _LN2_WIDE)
    if k >= q.frac_bits + 1:
        return 0
    idx, rem = divmod(r * size, _LN2_WIDE)
    lo = lut[idx]
    hi = lut[idx + 1] if idx + 1 < size else lut[0] >> 1
    e = (lo << _INTERP_GUARD) - (((lo - hi) << _INTERP_GUARD) * rem) // _LN2_WIDE
    shift = lut_q.frac_bits + _INTERP_GUARD + k - q.frac_bits
    return e >> shift if shift >= 0 else e << -shift


_LUT_CACHE: dict = {}


def _default_lut():
    key = (DEFAULT_LUT_FORMAT, LUT_SIZE)
    if key not in _LUT_CACHE:
        _LUT_CACHE[key] = make_exp_lut()
    return _LUT_CACHE[key]


def exp_neg_error_bound(q: QFormat, lut_q: QFormat = DEFAULT_LUT_FORMAT,
                        size: int = LUT_SIZE) -> float:
    """Analytic max |fx_exp_neg - exp(-u)| for exactly represented u."""
    h = math.log(2.0) / size
    return 0.5 * lut_q.ulp + h * h / 8.0 + 2.0 ** -(lut_q.frac_bits + _INTERP_GUARD) + q.ulp


# ---------------------------------------------------------------------------
# trigger image

TABLE_ORDER = ("basis", "norm_mean", "norm_invstd", "support_vectors", "dual_coeffs",
               "bias", "gamma", "exp_lut")
STAGE_ORDER = ("pixels", "accumulator", "features", "normalized", "exp_input")
_GUARDED = ("dual_coeffs", "bias")


@dataclass(frozen=True)
class TriggerFormats:
    pixels: QFormat = QFormat(32, 16)
    basis: QFormat = QFormat(32, 30)
    accumulator: QFormat = QFormat(64, 32)
    features: QFormat = QFormat(32, 16)
    norm_mean: QFormat = QFormat(32, 16)
    norm_invstd: QFormat = QFormat(32, 24)
    normalized: QFormat = QFormat(32, 24)
    support_vectors: QFormat = QFormat(32, 24)
    dual_coeffs: Optional[QFormat] = QFormat(32, 8)
    bias: Optional[QFormat] = None  # None: same as dual_coeffs
    gamma: QFormat = QFormat(32, 24)
    exp_input: QFormat = QFormat(32, 24)
    exp_lut: QFormat = DEFAULT_LUT_FORMAT

    def resolved(self) -> "TriggerFormats":
        return replace(self, bias=self.bias or self.dual_coeffs)


def wide_formats(frac: int = 40) -> TriggerFormats:
    """Everything in 64-bit Q24.40 (accumulator 128-bit), for precision head-room runs."""
    q = QFormat(64, frac)
    return TriggerFormats(
        pixels=q, basis=q, accumulator=QFormat(128, 2 * frac), features=q, norm_mean=q,
        norm_invstd=q, normalized=q, support_vectors=q, dual_coeffs=q, bias=q, gamma=q,
        exp_input=q, exp_lut=QFormat(64, frac, signed=False),
    )


def auto_dual_format(max_abs: float, total_bits: int = 32) -> QFormat:
    """Widest fraction that leaves room for ``max_abs`` plus a sign and a guard bit."""
    mag_bits = max(0, math.frexp(max_abs)[1]) if max_abs > 0 else 0
    int_bits = mag_bits + 2
    if int_bits >= total_bits:
        raise InvalidArgument(f"{max_abs} does not fit {total_bits}-bit storage")
    return QFormat(total_bits, total_bits - int_bits)


@dataclass
class TriggerImage:
    n_max: int
    n_pixels: int
    formats: TriggerFormats
    tables: dict  # name -> 1-D object array of raw ints
    saturation: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return n_features(self.n_max)

    @property
    def n_sv(self) -> int:
        return len(self.tables["dual_coeffs"])

    def table_format(self, name: str) -> QFormat:
        return getattr(self.formats, name)

    def dequantized(self, name: str) -> np.ndarray:
        return from_fixed(np.asarray(self.tables[name], dtype=object), self.table_format(name))

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(TRIGGER_MAGIC)
        out.write(struct.pack("<HHIII", 1, self.n_max, self.n_pixels, self.n_features, self.n_sv))
        out.write(struct.pack("<H", len(TABLE_ORDER) + len(STAGE_ORDER)))
        for name in TABLE_ORDER:
            q = self.table_format(name)
            out.write(struct.pack("<BBI", q.total_bits, q.frac_bits, len(self.tables[name])))
        for name in STAGE_ORDER:
            q = getattr(self.formats, name)
            out.write(struct.pack("<BBI", q.total_bits, q.frac_bits, 0))
        for name in TABLE_ORDER:
            q = self.table_format(name)
            nbytes = q.total_bits // 8
            for r in self.tables[name]:
                out.write(int(r).to_bytes(nbytes, "little", signed=q.signed))
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "TriggerImage":
        if data[:4] != TRIGGER_MAGIC:
            raise DataFormatError("not a trigger image")
        try:
            version, n_max, n_pix, n_feat, n_sv = struct.unpack_from("<HHIII", data, 4)
            if version != 1:
                raise DataFormatError(f"unsupported trigger image version {version}")
            (n_desc,) = struct.unpack_from("<H", data, 20)
            if n_desc != len(TABLE_ORDER) + len(STAGE_ORDER):
                raise DataFormatError("unexpected descriptor count")
            off = 22
            fmts, counts = {}, {}
            for name in TABLE_ORDER + STAGE_ORDER:
                tb, fb, cnt = struct.unpack_from("<BBI", data, off)
                off += 6
                fmts[name] = QFormat(tb, fb, signed=(name != "exp_lut"))
                counts[name] = cnt
            tables = {}
            for name in TABLE_ORDER:
                q = fmts[name]
                nb = q.total_bits // 8
                vals = []
                for _ in range(counts[name]):
                    chunk = data[off:off + nb]
                    if len(chunk) != nb:
                        raise DataFormatError("truncated trigger image")
                    vals.append(int.from_bytes(chunk, "little", signed=q.signed))
                    off += nb
                arr = np.empty(len(vals), dtype=object)
                arr[:] = vals
                tables[name] = arr
            if off != len(data):
                raise DataFormatError("trailing bytes in trigger image")
        except struct.error as exc:
            raise DataFormatError(f"truncated trigger image: {exc}") from exc
        if n_feat != n_features(n_max) or counts["basis"] != 2 * n_pix * n_feat:
            raise DataFormatError("trigger image table sizes are inconsistent")
        formats = TriggerFormats(**fmts)
        return cls(n_max, n_pix, formats, tables)


def _check_range(name: str, values: np.ndarray, q: QFormat) -> None:
    max_abs = float(np.max(np.abs(values))) if np.size(values) else 0.0
    limit = max(q.max_value, -q.min_value)
    if name in _GUARDED:
        limit /= 2.0  # one guard bit for quantities that are summed
    if max_abs > limit:
        raise ExportRangeError(name, max_abs, limit)


def export_trigger(model: SvmModel, table: BasisTable,
                   formats: TriggerFormats = TriggerFormats()) -> TriggerImage:
    """Quantise basis, normaliser, model and exp LUT into a ``TriggerImage``.

    ``formats.dual_coeffs = None`` picks a 32-bit format from the coefficient
    range (see ``auto_dual_format``).  A table whose range exceeds its format
    raises ``ExportRangeError`` naming that table.
    """
    if not model.converged:
        raise InvalidArgument("refusing to export a non-converged model")
    if model.normalizer is None:
        raise InvalidArgument("model has no normalizer")
    if model.support_vectors.shape[1] != table.n_pairs:
        raise InvalidArgument("model dimension does not match basis table")
    if formats.dual_coeffs is None:
        m = max(float(np.max(np.abs(model.dual_coeffs))), abs(model.bias))
        formats = replace(formats, dual_coeffs=auto_dual_format(m))
    formats = formats.resolved()

    inter = np.empty((table.n_pixels, table.n_pairs, 2))
    inter[..., 0] = table.re
    inter[..., 1] = table.im
    sources = {
        "basis": inter.ravel(),
        "norm_mean": model.normalizer.mean,
        "norm_invstd": 1.0 / model.normalizer.std,
        "support_vectors": model.support_vectors.ravel(),
        "dual_coeffs": model.dual_coeffs,
        "bias": np.array([model.bias]),
        "gamma": np.array([model.gamma]),
    }
    tables, sat = {}, {}
    for name, vals in sources.items():
        q = getattr(formats, name)
        _check_range(name, vals, q)
        tables[name], sat[name] = quantize_array(vals, q)
    lut = make_exp_lut(formats.exp_lut)
    arr = np.empty(len(lut), dtype=object)
    arr[:] = lut
    tables["exp_lut"] = arr
    sat["exp_lut"] = 0
    return TriggerImage(table.n_max, table.n_pixels, formats, tables, sat)


# ---------------------------------------------------------------------------
# pipeline

@dataclass
class FxResult:
    label: int
    decision_raw: int
    decision: float
    saturated: bool
    features_raw: Optional[list] = None


class FxPipeline:
    """Pre-unpacked trigger tables for repeated evaluation."""

    def __init__(self, trigger: TriggerImage):
        self.t = trigger
        f = trigger.formats
        self.f = f
        nf = trigger.n_features
        basis = np.asarray(trigger.tables["basis"], dtype=object).reshape(trigger.n_pixels, nf, 2)
        self.b_re = basis[..., 0]
        self.b_im = basis[..., 1]
        # int64 copies usable when the static bound allows
        self.b_re64 = self.b_re.astype(np.int64) if f.basis.total_bits <= 63 else None
        self.b_im64 = self.b_im.astype(np.int64) if f.basis.total_bits <= 63 else None
        self.col_abs = max(int(np.max(np.abs(self.b_re).sum(axis=0))),
                           int(np.max(np.abs(self.b_im).sum(axis=0))))
        self.mean = [int(v) for v in trigger.tables["norm_mean"]]
        self.invstd = [int(v) for v in trigger.tables["norm_invstd"]]
        self.sv = [[int(v) for v in row] for row in
                   np.asarray(trigger.tables["support_vectors"], dtype=object).reshape(-1, nf)]
        self.coef = [int(v) for v in trigger.tables["dual_coeffs"]]
        self.bias = int(trigger.tables["bias"][0])
        self.gamma = int(trigger.tables["gamma"][0])
        self.lut = [int(v) for v in trigger.tables["exp_lut"]]
        # clamping u at the top of the exp input range is harmless when exp already underflows
        self.exp_clamp_ok = fx_exp_neg(f.exp_input.max_raw, f.exp_input, self.lut, f.exp_lut) == 0

    def quantize_pixels(self, pixels) -> tuple[list, bool]:
        raw, sat = quantize_array(pixels, self.f.pixels)
        return raw, sat > 0

    def run(self, pix_raw, keep_features: bool = False) -> FxResult:
        f = self.f
        t = self.t
        if len(pix_raw) != t.n_pixels:
            raise InvalidArgument(f"image has {len(pix_raw)} pixels, trigger expects {t.n_pixels}")
        sat = False

        # 1. moments, exact multiply-accumulate
        max_pix = max((abs(int(v)) for v in pix_raw), default=0)
        if self.b_re64 is not None and max_pix * self.col_abs < (1 << 62):
            p64 = np.asarray([int(v) for v in pix_raw], dtype=np.int64)
            acc_re = [int(v) for v in p64 @ self.b_re64]
            acc_im = [int(v) for v in p64 @ self.b_im64]
        else:
            pobj = np.asarray([int(v) for v in pix_raw], dtype=object)
            acc_re = [int(v) for v in pobj @ self.b_re]
            acc_im = [int(v) for v in pobj @ self.b_im]
        prod_frac = f.pixels.frac_bits + f.basis.frac_bits

        feats = []
        for re_, im_ in zip(acc_re, acc_im):
            a_re, s1 = requantize(re_, prod_frac, f.accumulator)
            a_im, s2 = requantize(im_, prod_frac, f.accumulator)
            m_re, s3 = requantize(a_re, f.accumulator.frac_bits, f.features)
            m_im, s4 = requantize(a_im, f.accumulator.frac_bits, f.features)
            # 2. magnitude: sqrt of the double-width sum of squares stays in the feature format
            mag, s5 = saturate(isqrt_nonrestoring(m_re * m_re + m_im * m_im), f.features)
            sat |= s1 or s2 or s3 or s4 or s5
            feats.append(mag)

        # 3. normalisation
        x = []
        shift_mean = f.norm_mean.frac_bits - f.features.frac_bits
        for k, fv in enumerate(feats):
            mean_in_f = rshift_rne(self.mean[k], shift_mean)
            d = fv - mean_in_f
            v, s = requantize(d * self.invstd[k], f.features.frac_bits + f.norm_invstd.frac_bits,
                              f.normalized)
            sat |= s
            x.append(v)
        sv_shift = f.support_vectors.frac_bits - f.normalized.frac_bits
        if sv_shift:
            x_sv = [rshift_rne(v, -sv_shift) for v in x]  # align to the SV format
        else:
            x_sv = x

        # 4/5. kernel terms and decision, exact accumulation
        u_frac = 2 * f.support_vectors.frac_bits + f.gamma.frac_bits
        total = 0
        for sv, c in zip(self.sv, self.coef):
            d2 = 0
            for xv, sv_k in zip(x_sv, sv):
                diff = xv - sv_k
                d2 += diff * diff
            u, s = requantize(self.gamma * d2, u_frac, f.exp_input)
            sat |= s and not (self.exp_clamp_ok and u > 0)
            kval = fx_exp_neg(max(u, 0), f.exp_input, self.lut, f.exp_lut)
            total += c * kval
        dec_frac = f.dual_coeffs.frac_bits + f.exp_input.frac_bits
        total += rshift_rne(self.bias, f.bias.frac_bits - dec_frac)
        dec, s = requantize(total, dec_frac, f.accumulator)
        sat |= s
        label = 1 if dec >= 0 else -1
        return FxResult(label, dec, from_fixed(dec, f.accumulator), sat,
                        feats if keep_features else None)


def fx_pipeline(trigger: TriggerImage, pix_raw, pipeline: Optional[FxPipeline] = None):
    """Run one quantised image through the trigger; returns ``(label, raw decision, saturated)``."""
    res = (pipeline or FxPipeline(trigger)).run(pix_raw)
    return res.label, res.decision_raw, res.saturated


# ---------------------------------------------------------------------------
# error budget and agreement

def decision_error_bound(trigger: TriggerImage, model: SvmModel, table: BasisTable,
                         pixels) -> float:
    """First-principles bound on |fixed - float| decision for one cleaned image."""
    f = trigger.formats
    pix = np.asarray(pixels, dtype=float)
    B = np.abs(table.values.real), np.abs(table.values.imag)
    abs_pix = np.abs(pix)
    e_comp = []
    for Bc in B:
        e = (abs_pix @ (np.full_like(Bc, 0.5 * f.basis.ulp))
             + (0.5 * f.pixels.ulp) * Bc.sum(axis=0)
             + 0.25 * f.pixels.ulp * f.basis.ulp * len(pix)
             + 0.5 * f.accumulator.ulp + 0.5 * f.features.ulp)
        e_comp.append(e)
    e_feat = np.hypot(e_comp[0], e_comp[1]) + f.features.ulp

    feats = np.abs(pix @ table.values)
    norm = model.normalizer
    s = 1.0 / norm.std
    centered = np.abs(feats - norm.mean)
    e_x = ((e_feat + 0.5 * f.norm_mean.ulp + 0.5 * f.features.ulp) * (s + 0.5 * f.norm_invstd.ulp)
           + centered * 0.5 * f.norm_invstd.ulp + 0.5 * f.normalized.ulp)
    x = (feats - norm.mean) * s

    e_k = e_x + 0.5 * f.support_vectors.ulp
    diff = np.abs(x[None, :] - model.support_vectors)
    d2 = (diff**2).sum(axis=1)
    e_d2 = (2.0 * diff * e_k + e_k**2).sum(axis=1)
    g = model.gamma
    e_u = g * e_d2 + (d2 + e_d2) * 0.5 * f.gamma.ulp + 0.5 * f.exp_input.ulp
    u = g * d2
    kern = np.exp(-u)
    e_kern = np.exp(-np.maximum(u - e_u, 0.0)) * e_u + exp_neg_error_bound(f.exp_input, f.exp_lut)
    c = np.abs(model.dual_coeffs)
    e_dec = (c * e_kern).sum() + 0.5 * f.dual_coeffs.ulp * (kern + e_kern).sum()
    e_dec += 0.5 * f.bias.ulp + 0.5 * f.accumulator.ulp
    # float reference rounding
    e_dec += 1e-9 * (1.0 + c.sum())
    return float(e_dec)


@dataclass
class AgreementRow:
    event_id: int
    float_decision: float
    fx_decision: float
    abs_err: float
    label_float: int
    label_fx: int
    saturated: bool
    bound: Optional[float] = None


@dataclass
class AgreementReport:
    rows: list

    @property
    def n_events(self) -> int:
        return len(self.rows)

    @property
    def mismatches(self) -> int:
        return sum(r.label_float != r.label_fx for r in self.rows)

    @property
    def agreement(self) -> float:
        return 1.0 - self.mismatches / self.n_events if self.rows else 1.0

    @property
    def max_abs_err(self) -> float:
        return max((r.abs_err for r in self.rows), default=0.0)

    @property
    def mean_abs_err(self) -> float:
        return float(np.mean([r.abs_err for r in self.rows])) if self.rows else 0.0

    @property
    def saturated_events(self) -> int:
        return sum(r.saturated for r in self.rows)

    @property
    def bound_violations(self) -> int:
        return sum(1 for r in self.rows if r.bound is not None and not r.saturated
                   and r.abs_err > r.bound)

    def summary(self) -> dict:
        return {
            "events": self.n_events, "mismatches": self.mismatches,
            "agreement": self.agreement, "max_abs_err": self.max_abs_err,
            "mean_abs_err": self.mean_abs_err, "saturated_events": self.saturated_events,
            "bound_violations": self.bound_violations,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["event_id", "float_decision", "fx_decision", "abs_err", "label_float",
                    "label_fx", "saturated"])
        for r in self.rows:
            w.writerow([r.event_id, repr(r.float_decision), repr(r.fx_decision),
                        repr(r.abs_err), r.label_float, r.label_fx, int(r.saturated)])
        return buf.getvalue()


def agreement_report(model: SvmModel, trigger: TriggerImage, table: BasisTable, events,
                     with_bound: bool = False) -> AgreementReport:
    """Float vs fixed decision for each (already cleaned) event."""
    events = list(events)
    if not events:
        return AgreementReport([])
    pipe = FxPipeline(trigger)
    pix = np.array([np.asarray(e.pixel_phe, dtype=float) for e in events])
    ffloat = decision_values(model, np.abs(pix @ table.values), raw=True)
    rows = []
    for ev, p, fd in zip(events, pix, ffloat):
        raw, sat_in = pipe.quantize_pixels(p)
        res = pipe.run(raw)
        bound = decision_error_bound(trigger, model, table, p) if with_bound else None
        rows.append(AgreementRow(
            ev.event_id, float(fd), res.decision, abs(res.decision - float(fd)),
            int(sign_label(fd)), res.label, bool(res.saturated or sat_in), bound))
    return AgreementReport(rows)
