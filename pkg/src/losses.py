import numpy as np

from stft import compress_values


def _values(spec):
    return getattr(spec, "values", spec)


def _check(enhanced, clean, power):
    if enhanced.shape != clean.shape:
        raise ValueError(f"enhanced {enhanced.shape} and clean {clean.shape} spectrograms differ in shape")
    if power <= 0 or power > 1:
        raise ValueError(f"compression power must be in (0, 1], got {power}")


def loss(enhanced, clean_ch0, lam, power=0.3):
    """Compressed magnitude error plus lam times compressed complex error, summed over bins."""
    e, c = _values(enhanced), _values(clean_ch0)
    _check(e, c, power)
    e_p, c_p = compress_values(e, power), compress_values(c, power)
    magnitude_term = np.sum((np.abs(c_p) - np.abs(e_p)) ** 2)
    complex_term = np.sum(np.abs(c_p - e_p) ** 2)
    return float(magnitude_term + lam * complex_term)


def loss_and_input_grad(enhanced, clean_ch0, lam, power=0.3):
    """Loss and dL/dRe(E) + i dL/dIm(E); bins with |E| = 0 get gradient 0."""
    e, c = _values(enhanced), _values(clean_ch0)
    _check(e, c, power)
    e_p, c_p = compress_values(e, power), compress_values(c, power)
    r = np.abs(e)
    r_p = np.abs(e_p)
    diff = c_p - e_p
    value = float(np.sum((np.abs(c_p) - r_p) ** 2) + lam * np.sum(np.abs(diff) ** 2))

    nonzero = r > 0
    unit = np.zeros_like(e)
    unit[nonzero] = e[nonzero] / r[nonzero]
    r_pm1 = np.zeros_like(r)
    r_pm1[nonzero] = r[nonzero] ** (power - 1.0)

    # radial and tangential parts of the complex residual relative to E
    rotated = diff * np.conj(unit)
    radial, tangential = rotated.real, rotated.imag

    grad_magnitude = -2.0 * (np.abs(c_p) - r_p) * power * r_pm1
    grad_complex = -2.0 * r_pm1 * (power * radial + 1j * tangential)
    grad = unit * (grad_magnitude + lam * grad_complex)
    return value, grad


def mask_grad_from_input_grad(grad, noisy_sum):
    """Chain rule through E = M * X for a real mask M."""
    return np.real(np.conj(grad) * noisy_sum)
