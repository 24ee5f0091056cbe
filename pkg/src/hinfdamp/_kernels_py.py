"""Pure numpy implementation of the frequency-sweep kernel."""
import numpy as np

_CHUNK = 8192


def sigma_max_modal(omegas, poles, Cm, Bm):
    """sigma_max(Cm diag(1/(i w - poles)) Bm) for every w in ``omegas``."""
    omegas = np.ascontiguousarray(omegas, dtype=float)
    poles = np.asarray(poles, dtype=complex)
    Cm = np.asarray(Cm, dtype=complex)
    Bm = np.asarray(Bm, dtype=complex)
    nl, nm = Cm.shape[0], Bm.shape[1]
    out = np.empty(omegas.size)
    if min(nl, nm) == 0:
        out[:] = 0.0
        return out
    for start in range(0, omegas.size, _CHUNK):
        w = omegas[start:start + _CHUNK]
        R = 1.0 / (1j * w[:, None] - poles[None, :])
        F = (Cm[None, :, :] * R[:, None, :]) @ Bm
        if nm <= nl:
            G = np.conj(np.swapaxes(F, 1, 2)) @ F
        else:
            G = F @ np.conj(np.swapaxes(F, 1, 2))
        lam = np.linalg.eigvalsh(G)[:, -1]
        out[start:start + _CHUNK] = np.sqrt(np.maximum(lam, 0.0))
    return out
