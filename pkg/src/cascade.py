"""
Cascade execution of the enhancement algorithms on a scenario.

Each stage estimates its correlations from its own input signals under the
regime recipe of that stage, builds per-bin stage matrices, and passes the
filtered signals on. The ground-truth components (s, n, e) are pushed through
the same stages so metrics can be taken after every stage.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from errors import InvalidInputError
from estimation import (
    DEFAULT_VAD_THRESHOLD_DB,
    Regime,
    SpectralCorrelationSet,
    VadTrack,
    accumulate_frames,
    estimate_cross_difference,
    estimate_extended_speech_plus_echo,
    estimate_rss,
    ideal_vads,
)
from filters import (
    AlgorithmKind,
    FilterSolution,
    FilterStage,
    _aec_matrix,
    _nrext_stage,
    _pinv_stack,
    apply_stage,
    mwf_ext,
)
from linalg_core import RankPolicy, map_bins, pseudo_inverse
from logger import get_logger
from metrics import BandSpec, ComponentSignals, MetricsReport, improvement_metrics
from room_sim import ScenarioBundle
from stft import StftConfig, StftTensor, analyze, synthesize

logger = get_logger("aecnr.cascade")

COMPONENTS = ("s", "n", "e")


class AlgorithmSettings(BaseModel):
    """Rank, inverse and estimation choices shared by all cascades."""

    speech_rank: int = Field(default=1, ge=1)
    extended_rank: Optional[int] = Field(default=None, ge=1, description="None -> speech_rank + L")
    inverse: Literal["block", "pinv"] = "block"
    rs_s_recipe: Literal["subtract", "inverse"] = "subtract"
    vad_threshold_db: float = Field(default=DEFAULT_VAD_THRESHOLD_DB, gt=0.0)
    farend_reference: Literal["echo", "loudspeaker"] = "echo"
    per_bin_vad: bool = False
    speech_active_sd: bool = False
    rank_tolerance: float = Field(default=1e-10, gt=0.0, lt=1.0)

    def policy(self) -> RankPolicy:
        return RankPolicy(relative_tolerance=self.rank_tolerance)

    def extended_rank_for(self, num_loudspeakers: int) -> int:
        if self.extended_rank is not None:
            return self.extended_rank
        return self.speech_rank + num_loudspeakers


@dataclass
class CascadeInputs:
    """STFTs and regimes of one scenario, shared by every algorithm run on it."""

    cfg: StftConfig
    mic: Dict[str, StftTensor]  # m, s, n, e
    loudspeakers: StftTensor
    vads: VadTrack
    reference: int
    num_samples: int
    echo_irs: np.ndarray

    @property
    def regimes(self) -> np.ndarray:
        return self.vads.regimes()

    @property
    def num_mics(self) -> int:
        return self.mic["m"].num_channels

    @property
    def num_loudspeakers(self) -> int:
        return self.loudspeakers.num_channels


@dataclass
class _Flow:
    """Mixture and component spectra at one point of the cascade, (K, F, D) each."""

    mix: np.ndarray
    parts: Dict[str, np.ndarray]

    def apply(self, matrices: np.ndarray) -> "_Flow":
        return _Flow(
            apply_stage(matrices, self.mix),
            {name: apply_stage(matrices, x) for name, x in self.parts.items()},
        )


@dataclass
class CascadeResult:
    """Enhanced reference output, the composed filter and per-stage components."""

    kind: AlgorithmKind
    enhanced: np.ndarray
    solution: FilterSolution
    reference_input: ComponentSignals
    stage_outputs: Dict[str, ComponentSignals] = field(default_factory=dict)
    correlation_sets: Dict[str, SpectralCorrelationSet] = field(default_factory=dict)

    @property
    def output(self) -> ComponentSignals:
        return list(self.stage_outputs.values())[-1]


def prepare_inputs(
    bundle: ScenarioBundle,
    cfg: StftConfig,
    settings: Optional[AlgorithmSettings] = None,
) -> CascadeInputs:
    """Analyze the mixture, its components and the loudspeakers; derive ideal VADs."""
    settings = settings or AlgorithmSettings()
    if bundle.sample_rate != cfg.sample_rate:
        raise InvalidInputError(
            f"scenario at {bundle.sample_rate} Hz, STFT configured for {cfg.sample_rate} Hz"
        )
    mic = {
        "m": analyze(bundle.m, cfg),
        "s": analyze(bundle.s, cfg),
        "n": analyze(bundle.n, cfg),
        "e": analyze(bundle.e, cfg),
    }
    vads = ideal_vads(
        bundle, cfg, settings.vad_threshold_db, settings.farend_reference, settings.per_bin_vad
    )
    return CascadeInputs(
        cfg=cfg,
        mic=mic,
        loudspeakers=analyze(bundle.l, cfg),
        vads=vads,
        reference=bundle.reference_mic,
        num_samples=bundle.num_samples,
        echo_irs=bundle.echo_irs,
    )


def echo_path_spectra(echo_irs: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Per-bin echo transfer matrices F (F, M, L) from the echo impulse responses."""
    return np.transpose(np.fft.rfft(echo_irs, n=cfg.window_length, axis=-1), (2, 0, 1))


def _plain_flow(inputs: CascadeInputs) -> _Flow:
    return _Flow(
        inputs.mic["m"].values,
        {name: inputs.mic[name].values for name in COMPONENTS},
    )


def _extended_flow(inputs: CascadeInputs) -> _Flow:
    """[m; l] with the loudspeaker signals booked under the echo component."""
    l = inputs.loudspeakers.values  # noqa: E741
    zeros = np.zeros_like(l)
    return _Flow(
        np.concatenate([inputs.mic["m"].values, l], axis=2),
        {
            "s": np.concatenate([inputs.mic["s"].values, zeros], axis=2),
            "n": np.concatenate([inputs.mic["n"].values, zeros], axis=2),
            "e": np.concatenate([inputs.mic["e"].values, l], axis=2),
        },
    )


def _to_time(flow: _Flow, inputs: CascadeInputs, channel: int) -> ComponentSignals:
    template = inputs.mic["m"]

    def one(x: np.ndarray) -> np.ndarray:
        return synthesize(template.with_values(x[:, :, channel:channel + 1]), inputs.cfg)[:, 0]

    return ComponentSignals(*(one(flow.parts[name]) for name in COMPONENTS))


def _mic_block(cset: SpectralCorrelationSet, num_mics: int) -> SpectralCorrelationSet:
    return SpectralCorrelationSet(
        cset.sums[:, :, :num_mics, :num_mics], cset.counts, cset.hermitian, f"{cset.label} mic block"
    )


def _speech_stage(
    cset: SpectralCorrelationSet,
    num_mics: int,
    settings: AlgorithmSettings,
    policy: RankPolicy,
) -> np.ndarray:
    """MWF matrix R_mm^+ R_ss on the microphone block of ``cset``."""
    rmm = cset.matrix(Regime.SPEECH_ECHO, "R_mm")[:, :num_mics, :num_mics]
    rss = estimate_rss(_mic_block(cset, num_mics), settings.speech_rank, policy)
    return _pinv_stack(rmm, policy) @ rss


def _aec_from_echo_regime(
    cset: SpectralCorrelationSet,
    num_mics: int,
    policy: RankPolicy,
    f_lin: Optional[np.ndarray] = None,
) -> np.ndarray:
    """[[I], [-H]] with H = R_ll^+ R_lm from regime (0,1), or R_ll^+ R_ll F^H."""
    r = cset.matrix(Regime.ECHO_ONLY, "R_ll/R_lm")
    rll = r[:, num_mics:, num_mics:]
    if f_lin is None:
        h = _pinv_stack(rll, policy) @ r[:, num_mics:, :num_mics]
    else:
        h = _pinv_stack(rll, policy) @ rll @ np.conj(np.swapaxes(f_lin, -1, -2))
    return _aec_matrix(h)


def run_cascade(
    kind: AlgorithmKind,
    bundle: Optional[ScenarioBundle],
    cfg: StftConfig,
    settings: Optional[AlgorithmSettings] = None,
    inputs: Optional[CascadeInputs] = None,
    cache_dir: Optional[Path] = None,
) -> CascadeResult:
    """
    Run one algorithm stage by stage and return the enhanced reference signal.

    Args:
        kind: algorithm to run (the unmodified NR-AEC exists in closed form only)
        bundle: scenario; may be None when ``inputs`` is given
        cfg: STFT settings
        settings: ranks, inverse and estimation choices
        inputs: precomputed spectra and VADs shared across algorithms
        cache_dir: when set, stage correlation sets are written there

    Raises:
        MissingRegimeError: a stage needs a regime with no frames.
    """
    kind = AlgorithmKind(kind)
    settings = settings or AlgorithmSettings()
    if inputs is None:
        if bundle is None:
            raise InvalidInputError("run_cascade needs a bundle or prepared inputs")
        inputs = prepare_inputs(bundle, cfg, settings)
    policy = settings.policy()
    codes = inputs.regimes
    num_mics = inputs.num_mics
    ref = inputs.reference
    num_ls = inputs.num_loudspeakers

    stages: List[FilterStage] = []
    outputs: Dict[str, ComponentSignals] = {}
    csets: Dict[str, SpectralCorrelationSet] = {}

    def run_stage(name: str, flow: _Flow, matrices: np.ndarray) -> _Flow:
        stages.append(FilterStage(name, matrices))
        out = flow.apply(matrices)
        outputs[name] = _to_time(out, inputs, ref)
        return out

    def estimate(name: str, flow: _Flow) -> SpectralCorrelationSet:
        cset = accumulate_frames(flow.mix, codes, label=name)
        csets[name] = cset
        return cset

    logger.info(f"Running {kind.value} cascade")
    if kind is AlgorithmKind.MWF:
        flow = _plain_flow(inputs)
        run_stage("mwf", flow, _speech_stage(estimate("mwf", flow), num_mics, settings, policy))

    elif kind is AlgorithmKind.MWF_EXT:
        flow = _extended_flow(inputs)
        cset = estimate("mwf_ext", flow)
        # Sample s/l cross-correlation in regime (1,1) leaks into the loudspeaker taps
        r_ext = cset.matrix(Regime.SPEECH_ECHO, "R_m~m~")
        rss = estimate_rss(_mic_block(cset, num_mics), settings.speech_rank, policy)
        solution = mwf_ext(
            r_ext[:, :num_mics, :num_mics],
            r_ext[:, num_mics:, num_mics:],
            r_ext[:, num_mics:, :num_mics],
            rss,
            ref,
            settings.inverse,
            policy,
        )
        run_stage("mwf_ext", flow, solution.stages[0].matrices)

    elif kind in (AlgorithmKind.AEC_NR, AlgorithmKind.AEC_NR_LIN):
        flow = _extended_flow(inputs)
        f_lin = echo_path_spectra(inputs.echo_irs, cfg) if kind is AlgorithmKind.AEC_NR_LIN else None
        flow = run_stage("aec", flow, _aec_from_echo_regime(estimate("aec", flow), num_mics, policy, f_lin))
        run_stage("nr", flow, _speech_stage(estimate("nr", flow), num_mics, settings, policy))

    elif kind is AlgorithmKind.NR_AEC_MOD:
        flow = _extended_flow(inputs)
        w = _speech_stage(estimate("nr", flow), num_mics, settings, policy)
        nr = np.zeros((w.shape[0], num_mics + num_ls, num_mics + num_ls), dtype=complex)
        nr[:, :num_mics, :num_mics] = w
        nr[:, num_mics:, num_mics:] = np.eye(num_ls)
        flow = run_stage("nr", flow, nr)
        run_stage("aec", flow, _aec_from_echo_regime(estimate("aec", flow), num_mics, policy))

    elif kind in (AlgorithmKind.NREXT_AEC_PF, AlgorithmKind.NREXT_AEC_LIN):
        flow = _extended_flow(inputs)
        cset = estimate("nr_ext", flow)
        r_ext = cset.matrix(Regime.SPEECH_ECHO, "R_m~m~")
        speech_echo = estimate_extended_speech_plus_echo(
            cset, settings.extended_rank_for(num_ls), policy
        )
        w = _nrext_stage(r_ext, speech_echo, num_mics, settings.inverse, True, policy)
        flow = run_stage("nr_ext", flow, w)

        if kind is AlgorithmKind.NREXT_AEC_LIN:
            f_lin = echo_path_spectra(inputs.echo_irs, cfg)
            run_stage("aec", flow, _aec_from_echo_regime(estimate("aec", flow), num_mics, policy, f_lin))
        else:
            flow = run_stage("aec", flow, _aec_from_echo_regime(estimate("aec", flow), num_mics, policy))
            pf_set = estimate("pf", flow)
            sigma = pf_set.matrix(Regime.SPEECH_ECHO, "Sigma_m'm'")
            rs_s = _post_filter_target(flow, inputs, codes, w, num_mics, settings, policy, pf_set)
            run_stage("pf", flow, _pinv_stack(sigma, policy) @ rs_s)
    else:
        raise InvalidInputError(f"{kind.value} has no cascade form")

    solution = FilterSolution.compose(kind, stages, ref)
    final = outputs[stages[-1].name]
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        for name, cset in csets.items():
            cset.save(cache_dir / f"{kind.value}_{name}.aecnr")
        solution.save(cache_dir / f"{kind.value}_filters.aecnr")

    m_ref = inputs.mic
    reference_input = _to_time(
        _Flow(m_ref["m"].values, {name: m_ref[name].values for name in COMPONENTS}), inputs, ref
    )
    return CascadeResult(
        kind=kind,
        enhanced=final.mixture,
        solution=solution,
        reference_input=reference_input,
        stage_outputs=outputs,
        correlation_sets=csets,
    )


def _post_filter_target(
    flow: _Flow,
    inputs: CascadeInputs,
    codes: np.ndarray,
    w: np.ndarray,
    num_mics: int,
    settings: AlgorithmSettings,
    policy: RankPolicy,
    pf_set: SpectralCorrelationSet,
) -> np.ndarray:
    """
    Cross-correlation R_s's between the post-AEC signals and the desired speech.

    ``subtract``: E{m_a m^H} in regime (1,1) minus regime (0,1), rank-truncated.
    ``inverse``: GEVD estimate of R_s's' from the post-AEC signals times W11^-1.
    """
    if settings.rs_s_recipe == "subtract":
        cross = accumulate_frames(flow.mix, codes, y=inputs.mic["m"].values, label="pf cross")
        return estimate_cross_difference(cross, settings.speech_rank)
    w11 = w[:, :num_mics, :num_mics]
    rs_s_prime = estimate_rss(pf_set, settings.speech_rank, policy)
    return rs_s_prime @ map_bins(lambda x: pseudo_inverse(x, policy), w11)


def stage_metrics(
    result: CascadeResult,
    cfg: StftConfig,
    bands: Optional[BandSpec] = None,
    speech_mask: Optional[np.ndarray] = None,
) -> Dict[str, MetricsReport]:
    """Metrics of every stage output against the reference microphone input."""
    return {
        name: improvement_metrics(
            result.reference_input,
            components,
            bands,
            cfg.sample_rate,
            cfg.window_length,
            speech_mask,
            algorithm=result.kind.value,
            stage=name,
        )
        for name, components in result.stage_outputs.items()
    }
