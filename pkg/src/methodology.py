# src/methodology.py
from __future__ import annotations
from typing import Dict

METHODS: Dict[str, Dict[str, str]] = {
    "secure_length_v1": {
        "title": "Secure key length, all intensities",
        "formula": (
            "floor(n0_low + n1_low * (1 - h(eph_up)) - lambda_ec - D1), "
            "D1 = 6 log2(21/eps_sec) + log2(2/eps_cor)."
        ),
        "assumptions": "Key bits from Z-basis clicks of u, v and w; lambda_ec over the same clicks.",
    },
    "secure_length_v2": {
        "title": "Secure key length, signal intensity only",
        "formula": (
            "floor(n0_low + n1_low - n1_up * h(eph_up) - lambda_ec - D2), "
            "D2 = 6 log2(46/eps_sec) + log2(2/eps_cor)."
        ),
        "assumptions": "Key bits from Z-basis clicks of u; lambda_ec over u clicks.",
    },
    "decoy_analytic": {
        "title": "Analytic decoy bounds",
        "formula": (
            "Counts scaled by e^k/p_k with Hoeffding deviation sqrt(n/2 ln(21/eps_sec)) on the "
            "basis total. Vacuum from (v, w), single photons from (u, v, w), X-basis single-photon "
            "errors and the single-photon upper bound from (v, w)."
        ),
        "assumptions": "Negative intermediate bounds are set to 0; n1_up clipped to [n1_low, Z clicks].",
    },
    "decoy_lp": {
        "title": "Linear-programming decoy bounds",
        "formula": (
            "Extremal Y0, Y1 and e1*Y1 over yields Y_0..Y_ncut with tail slacks, each intensity's "
            "gain bracketed by its Hoeffding deviation; phase error = max(e1 Y1)/min(Y1) in X plus "
            "the random-sampling correction."
        ),
        "assumptions": "Dense two-phase simplex, Bland's rule, tolerance 1e-9.",
    },
    "lambda_ec": {
        "title": "Error-correction leakage",
        "formula": "f_ec * n_z * h(qber_z).",
        "assumptions": "Model of the disclosed syndrome size; no reconciliation is run.",
    },
    "noise_model": {
        "title": "Detection model",
        "formula": (
            "Y0 = 1 - (1 - p_dark)^2 (1 - p_raman)^2; Q_k = 1 - (1 - Y0) e^(-eta k); "
            "E_k = (Y0/2 + e_mis (1 - e^(-eta k))(1 - Y0)) / Q_k."
        ),
        "assumptions": "No afterpulsing, dead time or double-click bookkeeping.",
    },
    "raman": {
        "title": "Forward Raman noise",
        "formula": (
            "P = P_launch * rho * d_lambda * L * e^(-alpha L), attenuated by drop filter and extra "
            "loss; per-gate probability = P / (h c / 1550 nm) * efficiency * gate width."
        ),
        "assumptions": "Only co-propagating channels contribute; rho is one calibration constant.",
    },
}


def method_note(key: str) -> str:
    m = METHODS.get(key, {})
    if not m:
        return ""
    return f"{m['title']}: {m['formula']} {m['assumptions']}"
