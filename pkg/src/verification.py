"""
Numerical certificates for the closed-form filters.

Exact correlation matrices are built from a single-bin synthetic model of
uncorrelated sources (desired speech, near-end noise, far-end speech and noise
played by the loudspeakers, echo through linear maps). The suites compare the
algorithms against each other, evaluate Wiener-Hopf residuals, and check the
block factorizations and generalized-inverse identities behind them.
"""

from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from errors import InvalidInputError
from filters import (
    AlgorithmKind,
    FilterSolution,
    aec_nr,
    aec_nr_lin,
    mwf,
    mwf_ext,
    nr_aec,
    nrext_aec_lin,
    nrext_aec_pf,
    post_stage_aec,
    wiener_hopf_residual,
)
from linalg_core import (
    RankPolicy,
    assemble_extended,
    check_generalized_inverse_conditions,
    extended_generalized_inverse,
    nested_range_identity_check,
    pseudo_inverse,
    schur_complement,
)
from logger import get_logger

logger = get_logger("aecnr.verification")

CERTIFICATE_TOLERANCE = 1e-8
FACTORIZATION_TOLERANCE = 1e-10
DEFAULT_SIZES = tuple((m, l) for m in range(1, 5) for l in range(1, 5))  # noqa: E741


def _h(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def _gram(paths: np.ndarray, psd: np.ndarray) -> np.ndarray:
    return (paths * psd) @ _h(paths)


@dataclass
class SyntheticModel:
    """
    Single-bin mixing model.

    Sources are mutually uncorrelated with power spectral densities ``*_psd``.
    Far-end speech reaches the loudspeakers through ``farend_speech_mix`` and
    the microphones through ``echo_path``; far-end noise uses
    ``farend_noise_mix`` and ``echo_path_noise`` (the same map when None).
    """

    speech_paths: np.ndarray
    speech_psd: np.ndarray
    noise_paths: np.ndarray
    noise_psd: np.ndarray
    farend_speech_mix: np.ndarray
    farend_speech_psd: np.ndarray
    farend_noise_mix: np.ndarray
    farend_noise_psd: np.ndarray
    echo_path: np.ndarray
    echo_path_noise: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("speech_psd", "noise_psd", "farend_speech_psd", "farend_noise_psd"):
            psd = np.asarray(getattr(self, name), dtype=float)
            if np.any(psd < 0):
                raise InvalidInputError(f"{name} must be non-negative")
            setattr(self, name, psd)
        m, l = self.num_mics, self.num_loudspeakers  # noqa: E741
        expected = {
            "speech_paths": (m, len(self.speech_psd)),
            "noise_paths": (m, len(self.noise_psd)),
            "farend_speech_mix": (l, len(self.farend_speech_psd)),
            "farend_noise_mix": (l, len(self.farend_noise_psd)),
            "echo_path": (m, l),
        }
        if self.echo_path_noise is not None:
            expected["echo_path_noise"] = (m, l)
        for name, shape in expected.items():
            if np.shape(getattr(self, name)) != shape:
                raise InvalidInputError(f"{name} must be {shape}, got {np.shape(getattr(self, name))}")

    @property
    def num_mics(self) -> int:
        return np.shape(self.echo_path)[0]

    @property
    def num_loudspeakers(self) -> int:
        return np.shape(self.echo_path)[1]

    @property
    def shared_path(self) -> bool:
        return self.echo_path_noise is None

    @property
    def noise_echo_path(self) -> np.ndarray:
        return self.echo_path if self.echo_path_noise is None else self.echo_path_noise


def _crandn(rng: np.random.Generator, *shape: int) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_model(
    rng: np.random.Generator,
    num_mics: int,
    num_loudspeakers: int,
    speech_sources: int = 1,
    noise_sources: Optional[int] = None,
    farend_speech_sources: Optional[int] = None,
    farend_noise_sources: Optional[int] = None,
    split_maps: bool = False,
    orthogonal: bool = True,
    duplicate_loudspeaker: bool = False,
) -> SyntheticModel:
    """
    Random model; the defaults give full-rank Sigma_mm and R_ll with one echo map.

    ``split_maps`` draws a separate echo map for far-end noise. With
    ``orthogonal`` the far-end speech and noise then occupy orthogonal
    loudspeaker subspaces, which keeps R_lsls R_ll^+ R_le = R_lses; without it
    the relation is violated. ``duplicate_loudspeaker`` copies loudspeaker 0
    into the last one.
    """
    m, l = num_mics, num_loudspeakers  # noqa: E741
    noise_sources = m + 1 if noise_sources is None else noise_sources
    farend_speech_sources = l + 1 if farend_speech_sources is None else farend_speech_sources
    farend_noise_sources = l + 1 if farend_noise_sources is None else farend_noise_sources

    def psd(n: int) -> np.ndarray:
        return rng.uniform(0.5, 2.0, n)

    speech_mix = _crandn(rng, l, farend_speech_sources)
    noise_mix = _crandn(rng, l, farend_noise_sources)
    echo_noise = None
    if split_maps:
        echo_noise = _crandn(rng, m, l)
        if orthogonal:
            if l < 2:
                raise InvalidInputError("orthogonal split maps need at least two loudspeakers")
            basis, _ = np.linalg.qr(_crandn(rng, l, l))
            k = l // 2
            speech_mix = basis[:, :k] @ _crandn(rng, k, farend_speech_sources)
            noise_mix = basis[:, k:] @ _crandn(rng, l - k, farend_noise_sources)
    if duplicate_loudspeaker:
        if l < 2:
            raise InvalidInputError("duplicating a loudspeaker needs at least two")
        speech_mix[-1] = speech_mix[0]
        noise_mix[-1] = noise_mix[0]

    return SyntheticModel(
        speech_paths=_crandn(rng, m, speech_sources),
        speech_psd=psd(speech_sources),
        noise_paths=_crandn(rng, m, noise_sources),
        noise_psd=psd(noise_sources),
        farend_speech_mix=speech_mix,
        farend_speech_psd=psd(farend_speech_sources),
        farend_noise_mix=noise_mix,
        farend_noise_psd=psd(farend_noise_sources),
        echo_path=_crandn(rng, m, l),
        echo_path_noise=echo_noise,
    )


def deficient_model(rng: np.random.Generator, num_mics: int, num_loudspeakers: int) -> SyntheticModel:
    """Model with rank(Sigma_mm) < M: fewer near-end sources than microphones."""
    if num_mics >= 2:
        return random_model(rng, num_mics, num_loudspeakers, 1, num_mics - 2)
    return random_model(rng, num_mics, num_loudspeakers, 0, 0)


@dataclass
class ModelCorrelations:
    """Correlation matrices of one model, exact or sampled."""

    rss: np.ndarray
    rnn: np.ndarray
    rlsls: np.ndarray
    rlnln: np.ndarray
    reses: np.ndarray
    renen: np.ndarray
    rlses: np.ndarray
    rlnen: np.ndarray
    f_lin: Optional[np.ndarray] = None

    @property
    def num_mics(self) -> int:
        return self.rss.shape[0]

    @property
    def rll(self) -> np.ndarray:
        return self.rlsls + self.rlnln

    @property
    def ree(self) -> np.ndarray:
        return self.reses + self.renen

    @property
    def rle(self) -> np.ndarray:
        return self.rlses + self.rlnen

    @property
    def rmm(self) -> np.ndarray:
        return self.rss + self.rnn + self.ree

    @property
    def r_ext(self) -> np.ndarray:
        return assemble_extended(self.rmm, self.rll, self.rle)

    @property
    def rss_ext(self) -> np.ndarray:
        dim = self.r_ext.shape[0]
        out = np.zeros((dim, dim), dtype=complex)
        out[: self.num_mics, : self.num_mics] = self.rss
        return out

    @property
    def speech_echo_ext(self) -> np.ndarray:
        """R_s~s~ + R_e~se~s with e~s = [e^s; l^s]."""
        return assemble_extended(self.rss + self.reses, self.rlsls, self.rlses)

    def scaled(self, gamma: float) -> "ModelCorrelations":
        g2 = gamma ** 2
        values = {k: v * g2 for k, v in asdict(self).items() if k != "f_lin"}
        return ModelCorrelations(f_lin=self.f_lin, **values)


def exact_correlations(model: SyntheticModel) -> ModelCorrelations:
    """Closed-form correlations from the mixing vectors and source PSDs."""
    f_s = np.asarray(model.echo_path, dtype=complex)
    f_n = np.asarray(model.noise_echo_path, dtype=complex)
    rlsls = _gram(model.farend_speech_mix, model.farend_speech_psd)
    rlnln = _gram(model.farend_noise_mix, model.farend_noise_psd)
    return ModelCorrelations(
        rss=_gram(model.speech_paths, model.speech_psd),
        rnn=_gram(model.noise_paths, model.noise_psd),
        rlsls=rlsls,
        rlnln=rlnln,
        reses=f_s @ rlsls @ _h(f_s),
        renen=f_n @ rlnln @ _h(f_n),
        rlses=rlsls @ _h(f_s),
        rlnen=rlnln @ _h(f_n),
        f_lin=f_s if model.shared_path else None,
    )


@dataclass
class ModelSamples:
    """Monte-Carlo draws of every component, rows are samples."""

    s: np.ndarray
    n: np.ndarray
    l_s: np.ndarray
    l_n: np.ndarray
    e_s: np.ndarray
    e_n: np.ndarray

    @property
    def m(self) -> np.ndarray:
        return self.s + self.n + self.e_s + self.e_n

    @property
    def l(self) -> np.ndarray:  # noqa: E743
        return self.l_s + self.l_n

    def correlations(self, f_lin: Optional[np.ndarray] = None) -> ModelCorrelations:
        k = self.s.shape[0]

        def corr(x: np.ndarray, y: np.ndarray) -> np.ndarray:
            return x.T @ y.conj() / k

        return ModelCorrelations(
            rss=corr(self.s, self.s),
            rnn=corr(self.n, self.n),
            rlsls=corr(self.l_s, self.l_s),
            rlnln=corr(self.l_n, self.l_n),
            reses=corr(self.e_s, self.e_s),
            renen=corr(self.e_n, self.e_n),
            rlses=corr(self.l_s, self.e_s),
            rlnen=corr(self.l_n, self.e_n),
            f_lin=f_lin,
        )


def sample_model(model: SyntheticModel, num_samples: int, rng: np.random.Generator) -> ModelSamples:
    """Draw circular complex Gaussian sources and mix them."""

    def draw(paths: np.ndarray, psd: np.ndarray) -> np.ndarray:
        q = _crandn(rng, num_samples, len(psd)) * np.sqrt(psd)
        return q @ np.asarray(paths).T

    l_s = draw(model.farend_speech_mix, model.farend_speech_psd)
    l_n = draw(model.farend_noise_mix, model.farend_noise_psd)
    return ModelSamples(
        s=draw(model.speech_paths, model.speech_psd),
        n=draw(model.noise_paths, model.noise_psd),
        l_s=l_s,
        l_n=l_n,
        e_s=l_s @ np.asarray(model.echo_path).T,
        e_n=l_n @ np.asarray(model.noise_echo_path).T,
    )


def additive_assumption_residual(corr: ModelCorrelations, policy: Optional[RankPolicy] = None) -> float:
    """Relative norm of R_lsls R_ll^+ R_le - R_lses."""
    lhs = corr.rlsls @ pseudo_inverse(corr.rll, policy) @ corr.rle
    return float(np.linalg.norm(lhs - corr.rlses) / max(1.0, np.linalg.norm(corr.rlses)))


def _vector(solution: FilterSolution) -> np.ndarray:
    return solution.filters[0]


def _deviation(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(a))))


@dataclass
class EquivalenceReport:
    """Filters, Wiener-Hopf residuals and pairwise deviations of one model."""

    filters: Dict[str, np.ndarray]
    residuals: Dict[str, float]
    deviations: Dict[Tuple[str, str], float]
    nrext_applicable: bool
    modified_deviation: float
    assumption_residual: float

    @property
    def max_deviation(self) -> float:
        return max(self.deviations.values(), default=0.0)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)

    def rows(self) -> List[Dict]:
        rows = [{"check": f"residual:{k}", "value": v} for k, v in self.residuals.items()]
        rows += [{"check": f"deviation:{a}-{b}", "value": v} for (a, b), v in self.deviations.items()]
        rows.append({"check": "nrext_applicable", "value": self.nrext_applicable})
        rows.append({"check": "modified_nr_aec_deviation", "value": self.modified_deviation})
        return rows


def closed_form_filters(
    corr: ModelCorrelations,
    reference: int = 0,
    policy: Optional[RankPolicy] = None,
    include_nrext: bool = True,
) -> Dict[str, FilterSolution]:
    """Every extended closed form computed from one set of correlations."""
    m = corr.num_mics
    solutions = {
        AlgorithmKind.MWF_EXT.value: mwf_ext(corr.rmm, corr.rll, corr.rle, corr.rss, reference, "block", policy),
        AlgorithmKind.AEC_NR.value: aec_nr(corr.rmm, corr.rll, corr.rle, corr.rss, reference, policy),
        AlgorithmKind.NR_AEC.value: nr_aec(corr.rmm, corr.rll, corr.rle, corr.rss, reference, False, policy),
    }
    if include_nrext:
        solutions[AlgorithmKind.NREXT_AEC_PF.value] = nrext_aec_pf(
            corr.r_ext, corr.speech_echo_ext, corr.rss, m, reference, "block", True, policy
        )
    if corr.f_lin is not None:
        solutions[AlgorithmKind.AEC_NR_LIN.value] = aec_nr_lin(
            corr.rll, corr.rss, corr.rnn, corr.f_lin, reference, policy
        )
        if include_nrext:
            solutions[AlgorithmKind.NREXT_AEC_LIN.value] = nrext_aec_lin(
                corr.r_ext, corr.speech_echo_ext, corr.rlsls, corr.f_lin, m, reference, "block", policy
            )
    return solutions


def equivalence_suite(
    model: SyntheticModel,
    reference: int = 0,
    policy: Optional[RankPolicy] = None,
) -> EquivalenceReport:
    """
    Compare the closed forms on the exact correlations of ``model``.

    NRext-AEC-PF (and its linear variant) is left out when the additive-map
    relation R_lsls R_ll^+ R_le = R_lses does not hold.
    """
    corr = exact_correlations(model)
    assumption = additive_assumption_residual(corr, policy)
    applicable = assumption <= CERTIFICATE_TOLERANCE
    if not applicable:
        logger.info(f"Additive-map relation violated ({assumption:.2e}); NRext marked not applicable")

    solutions = closed_form_filters(corr, reference, policy, include_nrext=applicable)
    filters = {name: _vector(sol) for name, sol in solutions.items()}
    residuals = {
        name: wiener_hopf_residual(corr.r_ext, corr.rss_ext, vec, reference)
        for name, vec in filters.items()
    }
    residuals[AlgorithmKind.MWF.value] = wiener_hopf_residual(
        corr.rmm, corr.rss, _vector(mwf(corr.rmm, corr.rss, reference, policy)), reference
    )
    deviations = {(a, b): _deviation(filters[a], filters[b]) for a, b in combinations(filters, 2)}
    modified = _vector(nr_aec(corr.rmm, corr.rll, corr.rle, corr.rss, reference, True, policy))
    return EquivalenceReport(
        filters=filters,
        residuals=residuals,
        deviations=deviations,
        nrext_applicable=applicable,
        modified_deviation=_deviation(filters[AlgorithmKind.MWF_EXT.value], modified),
        assumption_residual=assumption,
    )


@dataclass
class CheckResult:
    """Outcome of one randomized identity check."""

    name: str
    passed: bool
    value: float
    threshold: float
    num_mics: int = 0
    num_loudspeakers: int = 0
    seed: int = 0
    message: Optional[str] = None

    def to_row(self) -> Dict:
        return asdict(self)


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / max(1.0, np.linalg.norm(b)))


def _block_factors(corr: ModelCorrelations, policy: Optional[RankPolicy]):
    m, l = corr.num_mics, corr.rll.shape[0]  # noqa: E741
    h = pseudo_inverse(corr.rll, policy) @ corr.rle
    sigma = schur_complement(corr.rmm, _h(corr.rle), corr.rll, corr.rle, policy)
    eye_m, eye_l = np.eye(m), np.eye(l)
    zeros_ml = np.zeros((m, l))
    lower = np.block([[eye_m, zeros_ml], [h, eye_l]])
    return h, sigma, lower


def _check_factorizations(corr: ModelCorrelations, policy) -> Tuple[float, float]:
    """Reassembly errors of R~ = L^H D L and G = L^-1 D^+ L^-H."""
    h, sigma, lower = _block_factors(corr, policy)
    m = corr.num_mics
    middle = np.block([
        [sigma, np.zeros((m, corr.rll.shape[0]))],
        [np.zeros((corr.rll.shape[0], m)), corr.rll],
    ])
    r_err = _relative(_h(lower) @ middle @ lower, corr.r_ext)

    lower_inv = lower.copy()
    lower_inv[m:, :m] = -h
    middle_pinv = np.block([
        [pseudo_inverse(sigma, policy), np.zeros((m, corr.rll.shape[0]))],
        [np.zeros((corr.rll.shape[0], m)), pseudo_inverse(corr.rll, policy)],
    ])
    g = extended_generalized_inverse(corr.rmm, corr.rll, corr.rle, policy)
    g_err = _relative(lower_inv @ middle_pinv @ _h(lower_inv), g)
    return r_err, g_err


def _nested_range_instance(rng: np.random.Generator, n: int) -> float:
    """Deviation of (ABA)^+ ABC from A^+ C with col(C) in col(A) in col(B)."""
    rank_b = int(rng.integers(1, n + 1))
    rank_a = int(rng.integers(1, rank_b + 1))
    v, _ = np.linalg.qr(_crandn(rng, n, rank_b))
    q, _ = np.linalg.qr(_crandn(rng, rank_b, rank_a))
    u = v @ q
    a = (u * rng.uniform(0.5, 2.0, rank_a)) @ _h(u)
    b = (v * rng.uniform(0.5, 2.0, rank_b)) @ _h(v)
    c = u @ _crandn(rng, rank_a, int(rng.integers(1, n + 1)))
    return nested_range_identity_check(a, b, c)


def certificate_suite(
    sizes: Optional[Sequence[Tuple[int, int]]] = None,
    seeds: Iterable[int] = range(20),
    policy: Optional[RankPolicy] = None,
    tol: float = CERTIFICATE_TOLERANCE,
) -> List[CheckResult]:
    """
    Randomized checks of the block factorizations, the Penrose conditions of
    the block generalized inverse, the nested-column-space pseudo-inverse
    identity, and the NRext equivalences.
    """
    sizes = list(sizes or DEFAULT_SIZES)
    results: List[CheckResult] = []

    for seed in seeds:
        for m, l in sizes:  # noqa: E741
            rng = np.random.default_rng([seed, m, l])

            def record(name: str, value: float, passed: bool, threshold: float = tol, message=None):
                results.append(CheckResult(name, bool(passed), float(value), threshold, m, l, seed, message))

            full = exact_correlations(random_model(rng, m, l))
            deficient = exact_correlations(deficient_model(rng, m, l))

            r_err, g_err = _check_factorizations(full, policy)
            record("factorization_r", r_err, r_err <= FACTORIZATION_TOLERANCE, FACTORIZATION_TOLERANCE)
            record("factorization_g", g_err, g_err <= FACTORIZATION_TOLERANCE, FACTORIZATION_TOLERANCE)
            d_r, d_g = _check_factorizations(deficient, policy)
            worst = max(d_r, d_g)
            record("factorization_deficient", worst, worst <= FACTORIZATION_TOLERANCE, FACTORIZATION_TOLERANCE)

            for label, corr in (("full", full), ("deficient", deficient)):
                g = extended_generalized_inverse(corr.rmm, corr.rll, corr.rle, policy)
                cond = check_generalized_inverse_conditions(corr.r_ext, g, tol)
                record(f"penrose_products_{label}", 0.0, cond.rgr and cond.grg)
                hermitian_products = cond.rg_hermitian and cond.gr_hermitian
                if label == "full":
                    record("penrose_symmetry_full", 0.0, hermitian_products)
                else:
                    record(
                        "penrose_symmetry_fails_deficient", 0.0, not hermitian_products,
                        message="expected to fail when rank(Sigma_mm) < M",
                    )

            dev = _nested_range_instance(rng, m + l)
            record("nested_range_identity", dev, dev <= tol)

            report = equivalence_suite(random_model(rng, m, l), policy=policy)
            record("equivalence_full_rank", report.max_deviation, report.max_deviation <= tol)
            record("wiener_hopf_full_rank", report.max_residual, report.max_residual <= tol)

            deficient_report = equivalence_suite(deficient_model(rng, m, l), policy=policy)
            record(
                "wiener_hopf_deficient_sigma",
                deficient_report.max_residual,
                deficient_report.max_residual <= tol,
            )
            if l >= 2:
                dup = equivalence_suite(random_model(rng, m, l, duplicate_loudspeaker=True), policy=policy)
                record("wiener_hopf_duplicated_loudspeaker", dup.max_residual, dup.max_residual <= tol)

            sol = closed_form_filters(full, 0, policy)
            pf_stage = sol[AlgorithmKind.NREXT_AEC_PF.value]
            w = pf_stage.stage("nr_ext").matrices
            a, _ = post_stage_aec(_h(w) @ full.r_ext[None] @ w, m, policy)
            expected = pseudo_inverse(full.rlsls, policy) @ full.rlses
            dev = _relative(a[0], expected)
            record("nrext_aec_stage_identity", dev, dev <= tol)

            dev = _deviation(
                _vector(pf_stage), _vector(sol[AlgorithmKind.NREXT_AEC_LIN.value])
            )
            record("nrext_linear_simplification", dev, dev <= tol)
            dev = _deviation(
                _vector(sol[AlgorithmKind.AEC_NR.value]), _vector(sol[AlgorithmKind.AEC_NR_LIN.value])
            )
            record("aec_nr_linear_simplification", dev, dev <= tol)

            scaled = closed_form_filters(full.scaled(3.7), 0, policy)
            dev = max(_deviation(_vector(sol[k]), _vector(scaled[k])) for k in sol)
            record("scaling_covariance", dev, dev <= tol)

    failed = [r for r in results if not r.passed]
    logger.info(f"Certificate suite: {len(results) - len(failed)}/{len(results)} checks passed")
    for r in failed[:10]:
        logger.warning(f"FAILED {r.name} (M={r.num_mics}, L={r.num_loudspeakers}, seed={r.seed}): {r.value:.3e}")
    return results


def summarize_checks(results: Sequence[CheckResult]) -> Dict[str, Dict]:
    """Per-check pass counts and the worst observed value."""
    table: Dict[str, Dict] = {}
    for r in results:
        row = table.setdefault(r.name, {"passed": 0, "total": 0, "worst": 0.0, "threshold": r.threshold})
        row["total"] += 1
        row["passed"] += int(r.passed)
        row["worst"] = max(row["worst"], r.value)
    return table


def format_certificate(results: Sequence[CheckResult]) -> str:
    """Plain-text certificate table."""
    lines = [f"{'check':<40} {'passed':>9} {'worst':>11} {'threshold':>10}"]
    for name, row in summarize_checks(results).items():
        status = f"{row['passed']}/{row['total']}"
        lines.append(f"{name:<40} {status:>9} {row['worst']:>11.2e} {row['threshold']:>10.0e}")
    return "\n".join(lines)


def all_passed(results: Sequence[CheckResult]) -> bool:
    return all(r.passed for r in results)
