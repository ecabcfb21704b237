"""Interaction coefficients: Fresnel reflection and knife-edge diffraction."""

import numpy as np
from scipy.special import fresnel

C0 = 299_792_458.0


def fresnel_reflection(material, incidence_angle, frequency, polarization="TE"):
    """Plane-wave reflection coefficient of a half-space.

    Parameters
    ----------
    material : Material
    incidence_angle : float or np.ndarray
        Angle from the surface normal, in ``[0, pi/2)``.
    frequency : float
        Hz.
    polarization : {"TE", "TM"}
        ``TE``: E-field perpendicular to the plane of incidence.
        ``TM``: E-field in the plane of incidence.

    Returns
    -------
    complex or np.ndarray

    Notes
    -----
    With ``eta`` the complex relative permittivity, ``c = cos(theta)`` and
    ``r = sqrt(eta - sin(theta)**2)``::

        TE = (c - r) / (c + r)
        TM = (r - eta c) / (r + eta c)

    The TM sign is chosen so both polarizations agree at normal incidence,
    where each reduces to ``(1 - sqrt(eta)) / (1 + sqrt(eta))``. A perfect
    conductor is the ``eta -> inf`` limit of both: ``-1``. The
    vertical-field coefficient used for horizontal surfaces is ``-TM``, so
    a perfect conductor gives ``+1`` there and a dielectric tends to ``-1``
    at grazing incidence.
    """
    theta = np.asarray(incidence_angle, dtype=np.float64)
    if material.pec:
        out = np.full(theta.shape, -1.0 + 0j)
        return out if out.ndim else complex(out)
    eta = material.complex_permittivity(frequency)
    c = np.cos(theta)
    r = np.sqrt(eta - np.sin(theta) ** 2 + 0j)
    if polarization == "TE":
        out = (c - r) / (c + r)
    elif polarization == "TM":
        out = (r - eta * c) / (r + eta * c)
    else:
        raise ValueError("polarization must be 'TE' or 'TM'")
    return out if np.ndim(out) else complex(out)


def knife_edge_diffraction(nu):
    """Knife-edge field factor ``F(nu) = (1+j)/2 * int_nu^inf exp(-j pi t^2 / 2) dt``.

    ``|F(0)| = 1/2`` (6.02 dB loss) and ``F -> 1`` as ``nu -> -inf``.
    """
    s, c = fresnel(np.asarray(nu, dtype=np.float64))
    out = 0.5 * (1 + 1j) * ((0.5 - c) - 1j * (0.5 - s))
    return out if np.ndim(out) else complex(out)


def knife_edge_loss_db(nu):
    return -20.0 * np.log10(np.abs(knife_edge_diffraction(nu)))


def fresnel_parameter(excess_length, wavelength, shadowed):
    """``nu = +-2 sqrt(excess / lambda)``; positive when the edge blocks the direct line."""
    nu = 2.0 * np.sqrt(np.maximum(excess_length, 0.0) / wavelength)
    return np.where(shadowed, nu, -nu)


def edge_coefficient(nu):
    """Field carried by the edge-diffracted ray itself, phase-referenced to its own length.

    In the shadow region the whole received field is ``F(nu)`` times the
    free-space field. In the lit region the direct ray is traced separately,
    so only the edge contribution ``F(nu) - 1`` is kept. Multiplying by
    ``exp(j pi nu^2 / 2)`` removes the phase of the excess length, which the
    caller applies through the path delay.
    """
    nu = np.asarray(nu, dtype=np.float64)
    f = knife_edge_diffraction(nu)
    d = np.where(nu >= 0, f, f - 1.0)
    return d * np.exp(0.5j * np.pi * nu ** 2)
