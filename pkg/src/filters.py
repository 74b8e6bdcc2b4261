"""
Closed-form MMSE filters for joint echo cancellation and noise reduction.

Every algorithm is expressed as an ordered list of per-bin stage matrices W_k
(output = W_k^H x); the overall filter is the product of the stages applied to
the reference selection vector. Convention: the estimate is w^H x.

Inputs may be single-bin (D, D) matrices or per-bin stacks (F, D, D); outputs
are always stacks.
"""

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from containers import load_arrays, save_arrays
from errors import InvalidInputError
from linalg_core import (
    RankPolicy,
    extended_generalized_inverse,
    generalized_inverse,
    map_bins,
    pseudo_inverse,
    schur_complement,
)
from logger import get_logger
from stft import StftTensor

logger = get_logger("aecnr.filters")


class AlgorithmKind(str, Enum):
    """Algorithms by cascade structure."""

    MWF = "mwf"
    MWF_EXT = "mwf_ext"
    AEC_NR = "aec_nr"
    NR_AEC = "nr_aec"  # unmodified, closed form only
    NR_AEC_MOD = "nr_aec_mod"
    NREXT_AEC_PF = "nrext_aec_pf"
    AEC_NR_LIN = "aec_nr_lin"
    NREXT_AEC_LIN = "nrext_aec_lin"

    @property
    def uses_loudspeakers(self) -> bool:
        return self is not AlgorithmKind.MWF


BENCHMARKED = (
    AlgorithmKind.MWF,
    AlgorithmKind.MWF_EXT,
    AlgorithmKind.AEC_NR,
    AlgorithmKind.NR_AEC_MOD,
    AlgorithmKind.NREXT_AEC_PF,
)


@dataclass
class FilterStage:
    """Per-bin stage matrices (F, D_in, D_out)."""

    name: str
    matrices: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.matrices.shape[1]

    @property
    def output_dim(self) -> int:
        return self.matrices.shape[2]


@dataclass
class FilterSolution:
    """Overall per-bin filters (F, D) of one algorithm and its stage decomposition."""

    kind: AlgorithmKind
    filters: np.ndarray
    stages: List[FilterStage] = field(default_factory=list)
    reference: int = 0

    def __post_init__(self):
        if self.filters.ndim != 2:
            raise InvalidInputError(f"filters must be (F, D), got {self.filters.shape}")
        if not np.all(np.isfinite(self.filters)):
            raise InvalidInputError(f"{self.kind.value}: non-finite filter coefficients")
        for stage in self.stages:
            if stage.matrices.shape[0] != self.filters.shape[0]:
                raise InvalidInputError(f"stage '{stage.name}' has a different bin count")

    @property
    def num_bins(self) -> int:
        return self.filters.shape[0]

    @property
    def dimension(self) -> int:
        return self.filters.shape[1]

    def stage(self, name: str) -> FilterStage:
        for stage in self.stages:
            if stage.name == name:
                return stage
        raise KeyError(f"{self.kind.value} has no stage '{name}'")

    @classmethod
    def compose(cls, kind: AlgorithmKind, stages: Sequence[FilterStage], reference: int) -> "FilterSolution":
        """Multiply the stages in order and select the reference output channel."""
        product = stages[0].matrices
        for stage in stages[1:]:
            if stage.input_dim != product.shape[2]:
                raise InvalidInputError(
                    f"stage '{stage.name}' expects {stage.input_dim} inputs, gets {product.shape[2]}"
                )
            product = product @ stage.matrices
        if not 0 <= reference < product.shape[2]:
            raise InvalidInputError(f"reference {reference} outside {product.shape[2]} outputs")
        return cls(kind, product[:, :, reference], list(stages), reference)

    def save(self, path: Union[str, Path]) -> Path:
        arrays = {"filters": self.filters}
        arrays.update({f"stage_{i}": s.matrices for i, s in enumerate(self.stages)})
        return save_arrays(
            path,
            "filter_solution",
            arrays,
            {
                "kind": self.kind.value,
                "reference": self.reference,
                "stages": [s.name for s in self.stages],
            },
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FilterSolution":
        kind, metadata, arrays = load_arrays(path)
        if kind != "filter_solution":
            raise InvalidInputError(f"{path} holds '{kind}', not a filter solution")
        stages = [
            FilterStage(name, arrays[f"stage_{i}"]) for i, name in enumerate(metadata["stages"])
        ]
        return cls(AlgorithmKind(metadata["kind"]), arrays["filters"], stages, metadata["reference"])


def _stack(*mats) -> List[np.ndarray]:
    """Promote single-bin matrices to (1, ...) stacks."""
    out = []
    for mat in mats:
        arr = np.asarray(mat, dtype=complex)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise InvalidInputError(f"expected (D, E) or (F, D, E), got {arr.shape}")
        out.append(arr)
    if len({arr.shape[0] for arr in out}) != 1:
        raise InvalidInputError("inputs disagree on the number of bins")
    return out


def selection_vector(dimension: int, reference: int = 0) -> np.ndarray:
    if not 0 <= reference < dimension:
        raise InvalidInputError(f"reference {reference} outside dimension {dimension}")
    t = np.zeros(dimension, dtype=complex)
    t[reference] = 1.0
    return t


def _identity_stack(num_bins: int, dim: int) -> np.ndarray:
    return np.broadcast_to(np.eye(dim, dtype=complex), (num_bins, dim, dim)).copy()


def _aec_matrix(h: np.ndarray) -> np.ndarray:
    """[[I], [-H]] per bin for H of shape (F, L, M): output m - H^H l."""
    num_bins, _, num_mics = h.shape
    return np.concatenate([_identity_stack(num_bins, num_mics), -h], axis=1)


def _pad_extended(rss: np.ndarray, dim: int) -> np.ndarray:
    """Embed an (F, M, M) speech correlation in the extended dimension."""
    if rss.shape[-1] == dim:
        return rss
    padded = np.zeros((rss.shape[0], dim, dim), dtype=complex)
    m = rss.shape[-1]
    padded[:, :m, :m] = rss
    return padded


def _pinv_stack(r: np.ndarray, policy: Optional[RankPolicy]) -> np.ndarray:
    return map_bins(lambda rf: pseudo_inverse(rf, policy), r)


def _check_extended(rmm, rll, rle) -> Tuple[int, int]:
    num_mics, num_ls = rmm.shape[-1], rll.shape[-1]
    if rle.shape[-2:] != (num_ls, num_mics):
        raise InvalidInputError(f"Rle must be ({num_ls}, {num_mics}), got {rle.shape[-2:]}")
    return num_mics, num_ls


def mwf(rmm, rss, reference: int = 0, policy: Optional[RankPolicy] = None) -> FilterSolution:
    """Multichannel Wiener filter w = Rmm^+ Rss t_r on the microphones only."""
    rmm, rss = _stack(rmm, rss)
    if rmm.shape != rss.shape:
        raise InvalidInputError(f"Rmm {rmm.shape} and Rss {rss.shape} differ")
    w = _pinv_stack(rmm, policy) @ rss
    return FilterSolution.compose(AlgorithmKind.MWF, [FilterStage("mwf", w)], reference)


def isolated_nr(rmm, rss, reference: int = 0, policy: Optional[RankPolicy] = None) -> FilterSolution:
    """Noise reduction without echo: the microphone MWF."""
    return mwf(rmm, rss, reference, policy)


def isolated_aec(rll, rle, policy: Optional[RankPolicy] = None) -> FilterStage:
    """Echo canceller stage [[I], [-Rll^+ Rle]] mapping [m; l] to m - (Rll^+ Rle)^H l."""
    rll, rle = _stack(rll, rle)
    if rle.shape[1] != rll.shape[-1]:
        raise InvalidInputError(f"Rle {rle.shape} does not match Rll {rll.shape}")
    return FilterStage("aec", _aec_matrix(_pinv_stack(rll, policy) @ rle))


def mwf_ext(
    rmm, rll, rle, rss_ext,
    reference: int = 0,
    inverse: str = "block",
    policy: Optional[RankPolicy] = None,
) -> FilterSolution:
    """
    MWF on the extended vector [m; l]: w = G R_s~s~ t_r.

    ``rss_ext`` may be the full extended matrix or the microphone block R_ss.
    ``inverse`` selects the block generalized inverse or the minimum-norm one.
    """
    rmm, rll, rle, rss_ext = _stack(rmm, rll, rle, rss_ext)
    num_mics, num_ls = _check_extended(rmm, rll, rle)
    dim = num_mics + num_ls
    rss_ext = _pad_extended(rss_ext, dim)

    if inverse == "block":
        g = map_bins(lambda a, b, c: extended_generalized_inverse(a, b, c, policy), rmm, rll, rle)
    else:
        r_ext = np.concatenate(
            [np.concatenate([rmm, np.conj(np.swapaxes(rle, -1, -2))], axis=2),
             np.concatenate([rle, rll], axis=2)],
            axis=1,
        )
        g = map_bins(lambda r: generalized_inverse(r, num_mics, inverse, policy), r_ext)
    return FilterSolution.compose(
        AlgorithmKind.MWF_EXT, [FilterStage("mwf_ext", g @ rss_ext)], reference
    )


def aec_nr(
    rmm, rll, rle, rss,
    reference: int = 0,
    policy: Optional[RankPolicy] = None,
) -> FilterSolution:
    """Echo canceller -Rll^+ Rle followed by the noise reducer Sigma_mm^+ Rss."""
    rmm, rll, rle, rss = _stack(rmm, rll, rle, rss)
    _check_extended(rmm, rll, rle)
    aec = isolated_aec(rll, rle, policy)
    rel = np.conj(np.swapaxes(rle, -1, -2))
    sigma = map_bins(lambda a, b, c, d: schur_complement(a, b, c, d, policy), rmm, rel, rll, rle)
    nr = FilterStage("nr", _pinv_stack(sigma, policy) @ rss)
    return FilterSolution.compose(AlgorithmKind.AEC_NR, [aec, nr], reference)


def aec_nr_lin(
    rll, rss, rnn, f_lin,
    reference: int = 0,
    policy: Optional[RankPolicy] = None,
) -> FilterSolution:
    """
    AEC-NR for a known linear echo path F (M, L) with R_le = R_ll F^H.

    The AEC stage is Rll^+ Rll F^H and the NR stage (Rss + Rnn)^+ Rss.
    """
    rll, rss, rnn, f_lin = _stack(rll, rss, rnn, f_lin)
    if f_lin.shape[1:] != (rss.shape[-1], rll.shape[-1]):
        raise InvalidInputError(f"F_lin must be (M, L), got {f_lin.shape[1:]}")
    f_h = np.conj(np.swapaxes(f_lin, -1, -2))
    h = _pinv_stack(rll, policy) @ rll @ f_h
    nr = _pinv_stack(rss + rnn, policy) @ rss
    return FilterSolution.compose(
        AlgorithmKind.AEC_NR_LIN,
        [FilterStage("aec", _aec_matrix(h)), FilterStage("nr", nr)],
        reference,
    )


def nr_aec(
    rmm, rll, rle, rss,
    reference: int = 0,
    modified: bool = True,
    policy: Optional[RankPolicy] = None,
) -> FilterSolution:
    """
    Noise reducer on the microphones followed by an echo canceller on [m''; l].

    The unmodified NR uses the Schur complement (MSE optimal); the modified NR
    uses Rmm, the form that can be estimated before echo cancellation.
    """
    rmm, rll, rle, rss = _stack(rmm, rll, rle, rss)
    num_mics, num_ls = _check_extended(rmm, rll, rle)
    if modified:
        sigma = rmm
    else:
        rel = np.conj(np.swapaxes(rle, -1, -2))
        sigma = map_bins(lambda a, b, c, d: schur_complement(a, b, c, d, policy), rmm, rel, rll, rle)
    w = _pinv_stack(sigma, policy) @ rss

    num_bins = rmm.shape[0]
    dim = num_mics + num_ls
    nr = np.zeros((num_bins, dim, dim), dtype=complex)
    nr[:, :num_mics, :num_mics] = w
    nr[:, num_mics:, num_mics:] = np.eye(num_ls)
    h = _pinv_stack(rll, policy) @ rle @ w
    kind = AlgorithmKind.NR_AEC_MOD if modified else AlgorithmKind.NR_AEC
    return FilterSolution.compose(
        kind, [FilterStage("nr", nr), FilterStage("aec", _aec_matrix(h))], reference
    )


def _nrext_stage(
    r_ext: np.ndarray,
    speech_echo_ext: np.ndarray,
    num_mics: int,
    inverse: str,
    enforce_zero_structure: bool,
    policy: Optional[RankPolicy],
) -> np.ndarray:
    """W = G (R_s~s~ + R_e~se~s) with the upper-right block zeroed."""
    g = map_bins(lambda r: generalized_inverse(r, num_mics, inverse, policy), r_ext)
    w = g @ speech_echo_ext
    if enforce_zero_structure:
        w[:, :num_mics, num_mics:] = 0.0
    return w


def post_stage_aec(
    r_stage: np.ndarray,
    num_mics: int,
    policy: Optional[RankPolicy] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    AEC coefficients A = R_l'l'^+ R_l'm' and the residual correlation.

    ``r_stage`` is the extended correlation of the NR_ext outputs [m'; l'].
    Returns (A, Sigma_m'm').
    """
    rmm = r_stage[:, :num_mics, :num_mics]
    rll = r_stage[:, num_mics:, num_mics:]
    rlm = r_stage[:, num_mics:, :num_mics]
    rml = np.conj(np.swapaxes(rlm, -1, -2))
    a = _pinv_stack(rll, policy) @ rlm
    sigma = map_bins(lambda w, x, y, z: schur_complement(w, x, y, z, policy), rmm, rml, rll, rlm)
    return a, sigma


def nrext_aec_pf(
    r_ext, speech_echo_ext, rss,
    num_mics: int,
    reference: int = 0,
    inverse: str = "block",
    enforce_zero_structure: bool = True,
    policy: Optional[RankPolicy] = None,
) -> FilterSolution:
    """
    Extended noise reducer, then echo canceller, then post-filter.

    Args:
        r_ext: extended microphone/loudspeaker correlation R_m~m~
        speech_echo_ext: R_s~s~ + R_e~se~s
        rss: desired-speech correlation R_ss (M, M)
        num_mics: M
    """
    r_ext, speech_echo_ext, rss = _stack(r_ext, speech_echo_ext, rss)
    w = _nrext_stage(r_ext, speech_echo_ext, num_mics, inverse, enforce_zero_structure, policy)
    w_h = np.conj(np.swapaxes(w, -1, -2))
    a, sigma = post_stage_aec(w_h @ r_ext @ w, num_mics, policy)
    rs_s = np.conj(np.swapaxes(w[:, :num_mics, :num_mics], -1, -2)) @ rss
    pf = _pinv_stack(sigma, policy) @ rs_s
    return FilterSolution.compose(
        AlgorithmKind.NREXT_AEC_PF,
        [FilterStage("nr_ext", w), FilterStage("aec", _aec_matrix(a)), FilterStage("pf", pf)],
        reference,
    )


def nrext_aec_lin(
    r_ext, speech_echo_ext, rlsls, f_lin,
    num_mics: int,
    reference: int = 0,
    inverse: str = "block",
    policy: Optional[RankPolicy] = None,
) -> FilterSolution:
    """NR_ext followed by the known-path canceller R_lsls^+ R_lsls F^H; no post-filter."""
    r_ext, speech_echo_ext, rlsls, f_lin = _stack(r_ext, speech_echo_ext, rlsls, f_lin)
    w = _nrext_stage(r_ext, speech_echo_ext, num_mics, inverse, True, policy)
    f_h = np.conj(np.swapaxes(f_lin, -1, -2))
    a = _pinv_stack(rlsls, policy) @ rlsls @ f_h
    return FilterSolution.compose(
        AlgorithmKind.NREXT_AEC_LIN,
        [FilterStage("nr_ext", w), FilterStage("aec", _aec_matrix(a))],
        reference,
    )


def wiener_hopf_residual(r, rs, filters, reference: int = 0) -> float:
    """Frobenius norm of R w - R_s t_r over all bins."""
    r, rs = _stack(r, rs)
    filters = np.atleast_2d(np.asarray(filters, dtype=complex))
    dim = r.shape[-1]
    rs = _pad_extended(rs, dim)
    t = selection_vector(dim, reference)
    residual = np.einsum("fij,fj->fi", r, filters) - rs @ t
    return float(np.linalg.norm(residual))


def apply_stage(matrices: np.ndarray, x: np.ndarray) -> np.ndarray:
    """W^H x for every frame and bin: (F, D, E) with (K, F, D) -> (K, F, E)."""
    if matrices.shape[0] != x.shape[1] or matrices.shape[1] != x.shape[2]:
        raise InvalidInputError(f"stage {matrices.shape} does not fit frames {x.shape}")
    return np.einsum("fde,kfd->kfe", matrices.conj(), x)


def apply_per_bin(solution: Union[FilterSolution, np.ndarray], tensor: StftTensor) -> StftTensor:
    """Single-channel output w(f)^H x(k, f)."""
    filters = solution.filters if isinstance(solution, FilterSolution) else np.asarray(solution)
    if filters.shape != (tensor.num_bins, tensor.num_channels):
        raise InvalidInputError(
            f"filters {filters.shape} do not match tensor bins/channels "
            f"({tensor.num_bins}, {tensor.num_channels})"
        )
    out = np.einsum("fd,kfd->kf", filters.conj(), tensor.values)
    return tensor.with_values(out[:, :, None])
