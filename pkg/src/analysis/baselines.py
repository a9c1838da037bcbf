"""Classical reference denoisers: Gaussian low-pass and a shell-wise Wiener filter."""

import numpy as np

from ..ingestion.schemas import FilterKind, FilterSpec, ImageStack

OUTER_SHELL_FRACTION = 0.8


def _as_image(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"Expected a 2D image, got shape {image.shape}")
    return image


def _radial_frequency(shape: tuple[int, int]) -> np.ndarray:
    """|k| in cycles/pixel for every coefficient of an unshifted 2D FFT."""
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    return np.sqrt(fy**2 + fx**2)


def _shells(shape: tuple[int, int]) -> np.ndarray:
    return np.rint(_radial_frequency(shape) * max(shape)).astype(np.int64)


def _power(spectrum: np.ndarray) -> np.ndarray:
    # per-coefficient power normalized so white noise of variance v has E[P] = v
    return (spectrum.real**2 + spectrum.imag**2) / spectrum.size


def lowpass(image, sigma: float) -> np.ndarray:
    """Gaussian blur applied as the transfer function exp(−2π²σ²|f|²)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    image = _as_image(image)
    f = _radial_frequency(image.shape)
    transfer = np.exp(-2.0 * np.pi**2 * sigma**2 * f**2)
    return np.fft.ifft2(np.fft.fft2(image) * transfer).real


def wiener_shell(image, noise_var: float) -> np.ndarray:
    """Scale each radial shell by max(P̂ − noise_var, 0) / P̂, P̂ the shell-mean power."""
    if noise_var < 0:
        raise ValueError(f"noise_var must be non-negative, got {noise_var}")
    image = _as_image(image)
    spectrum = np.fft.fft2(image)
    shells = _shells(image.shape)
    power = _power(spectrum)

    sums = np.bincount(shells.ravel(), weights=power.ravel())
    counts = np.bincount(shells.ravel())
    shell_power = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)
    gain = np.divide(
        np.maximum(shell_power - noise_var, 0.0),
        shell_power,
        out=np.ones_like(shell_power),
        where=shell_power > 0,
    )
    return np.fft.ifft2(spectrum * gain[shells]).real


def estimate_noise_variance(image) -> float:
    """Mean power over coefficients at or beyond 0.8 of Nyquist."""
    image = _as_image(image)
    f = _radial_frequency(image.shape)
    outer = f >= OUTER_SHELL_FRACTION * 0.5
    return float(_power(np.fft.fft2(image))[outer].mean())


def apply_filter(spec: FilterSpec, image) -> np.ndarray:
    if spec.kind == FilterKind.LOWPASS:
        return lowpass(image, spec.sigma)
    noise_var = spec.noise_var if spec.noise_var is not None else estimate_noise_variance(image)
    return wiener_shell(image, noise_var)


def filter_stack(spec: FilterSpec, stack: ImageStack) -> ImageStack:
    filtered = np.stack([apply_filter(spec, img) for img in stack.images])
    return ImageStack(images=filtered, pixel_size=stack.pixel_size, metadata=stack.metadata)
