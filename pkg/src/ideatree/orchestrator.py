"""The budgeted main loop: initialize, then alternate expansion and
recombination until time runs out, checkpointing as it goes.

Everything stochastic draws from streams spawned off one seed, and every
tree mutation is mirrored into the event log, so a finished run can be
reproduced bit-for-bit or reconstructed from its log alone.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .clock import SimulatedClock, WallClock
from .config import RunConfig, dump_config
from .errors import (
    BudgetExhausted,
    CorruptLog,
    GeneratorFailure,
    InitializationFailure,
    InsufficientParents,
    MissingRunArtifacts,
)
from .evaluation import EvaluationPort, LandscapeConfig, SimulatedEvaluator
from .events import Event, EventKind, RunLog, read_log
from .generation import (
    ContextState,
    ExternalQueryPolicy,
    IdeaGenerator,
    SegmentTag,
    SpaceConfig,
    SyntheticGenerator,
)
from .embedding import VectorIdeaEmbedding
from .retrieval import FileCorpusRetriever
from .scoring import AnchorSet, BaselinePredictor, Predictor, build_anchor_set
from .search import (
    EvalPolicy,
    MergeMemory,
    SelectionMode,
    StageParams,
    _evaluate_batch,
    adding_stage,
    merging_stage,
)
from .setup_stages import (
    RotatingValidator,
    ScriptedBaseliner,
    SetupResult,
    SetupStages,
    StaticMetric,
    StaticReader,
    TaskSpec,
    pipeline_setup,
)
from .tree import (
    IdeationTree,
    MetricDirection,
    MetricSpec,
    Node,
    NodeLevel,
    backpropagate,
)

logger = logging.getLogger(__name__)

CHECKPOINT_DIR = "checkpoints"
LOG_FILENAME = "run.jsonl"
FINAL_SNAPSHOT_FILENAME = "final_snapshot.json"
RESULT_FILENAME = "result.json"
CONFIG_COPY_FILENAME = "config.yaml"

DEFAULT_ROOT_IDEA = "exploratory data analysis"


@dataclass
class PortSet:
    """Every swappable dependency a run needs, already wired together.
    The metric here must be the one the evaluator scores with."""

    stages: SetupStages
    gen: IdeaGenerator
    evaluator: EvaluationPort
    metric: MetricSpec
    clock: object
    predictor: Optional[Predictor] = None
    architectures: Optional[Sequence[str]] = None


@dataclass
class RunResult:
    tree: IdeationTree
    best_node_id: Optional[int]
    best_raw_score: Optional[float]
    iterations: int
    budget_exhausted: bool
    run_dir: Optional[Path] = None
    setup: Optional[SetupResult] = None


def build_synthetic_ports(config: RunConfig, corpus_dir: Optional[Path] = None) -> PortSet:
    """Self-contained ports over the simulated landscape: no network, no
    subprocesses, deterministic for a given config."""
    syn = config.synthetic
    metric = MetricSpec("landscape_quality", MetricDirection.HIGHER_BETTER)
    clock = _build_clock(config)
    space = SpaceConfig(
        dimension=syn.dimension, low=syn.low, high=syn.high,
        mt_jitter=syn.mt_jitter, merge_jitter=syn.merge_jitter,
    )
    retriever = FileCorpusRetriever(corpus_dir) if corpus_dir else None
    gen = SyntheticGenerator(space, seed=config.seed, retriever=retriever,
                             retrieve_k=config.retrieve_n_papers)
    landscape = LandscapeConfig(
        dimension=syn.dimension, optimum=tuple(syn.optimum),
        noise_sigma=syn.noise_sigma, full_cost=syn.full_cost,
        debug_cost=syn.debug_cost, merge_bonus=syn.merge_bonus,
    )
    evaluator = SimulatedEvaluator(landscape, metric, seed=config.seed, clock=clock)
    task = TaskSpec(
        description=f"synthetic {syn.dimension}-dimensional landscape",
        schema={f"x{i}": "float" for i in range(syn.dimension)},
        row_count=100,
    )
    stages = SetupStages(
        reader=StaticReader(task),
        metric=StaticMetric(metric),
        validator=RotatingValidator(),
        baseliner=ScriptedBaseliner(),
    )
    predictor = None
    if config.predict_before_evaluate:
        # radius a bit past the farthest corner keeps the lift curved
        # over the whole idea box
        radius = 1.25 * float(np.sqrt(syn.dimension)) * max(abs(syn.low), abs(syn.high))
        predictor = BaselinePredictor(
            embedder=VectorIdeaEmbedding(dimension=syn.dimension, radius=radius),
            temperature=0.1,
        )
    return PortSet(stages=stages, gen=gen, evaluator=evaluator, metric=metric,
                   clock=clock, predictor=predictor)


def _build_clock(config: RunConfig):
    if config.clock_mode == "simulated":
        return SimulatedClock(config.time_run_minutes)
    return WallClock(config.time_run_minutes)


def _eval_policy(config: RunConfig, predict_fn=None) -> EvalPolicy:
    return EvalPolicy(
        validation_attempts=config.validation_attempts,
        accelerated_debug=config.accelerated_debugging,
        predict_fn=predict_fn,
        predict_fraction=config.predict_fraction,
        workers=config.worker_count,
    )


# =====================================================================
# Initialization
# =====================================================================

def initialize_tree(
    ctx: ContextState,
    gen: IdeaGenerator,
    evaluator: EvaluationPort,
    config: RunConfig,
    rng: np.random.Generator,
    *,
    metric: MetricSpec,
    log: Optional[RunLog] = None,
    root_idea: str = DEFAULT_ROOT_IDEA,
) -> IdeationTree:
    """Build the starting tree: enriched root, a first rank of feature
    ideas, and fully evaluated model children under each.

    Initialization is not budget-gated (a zero-budget run still ends
    with a best node), but evaluations do charge the clock. If not one
    model idea survives evaluation there is nothing to search from and
    InitializationFailure is raised.
    """
    tree = IdeationTree.create(root_idea)
    if log is not None:
        log.append(EventKind.NODE_PROPOSED, node=tree.root.to_dict())
    for _ in range(config.number_of_ideas_eda):
        note = gen.enrich_eda(tree, ctx)
        if note:
            ctx.append(SegmentTag.EDA, note)
    fe_texts = gen.propose_fe(ctx, config.number_of_ideas_data)
    policy = _eval_policy(config)
    for fe_text in fe_texts:
        fe = tree.spawn(tree.root.id, NodeLevel.FE, fe_text)
        if log is not None:
            log.append(EventKind.NODE_PROPOSED, node=fe.to_dict())
        children = []
        for mt_text in gen.propose_mt(fe, ctx, config.number_of_ideas_modelling):
            node = tree.spawn(fe.id, NodeLevel.MT, mt_text)
            if log is not None:
                log.append(EventKind.NODE_PROPOSED, node=node.to_dict())
            children.append(node)
        _evaluate_batch(tree, children, evaluator, metric, policy, None, log)
    backpropagate(tree)
    if tree.best_evaluated_mt(metric) is None:
        raise InitializationFailure("no model idea survived initial evaluation")
    return tree


# =====================================================================
# Main loop
# =====================================================================

def run_main_loop(
    tree: IdeationTree,
    ctx: ContextState,
    ports: PortSet,
    mem: MergeMemory,
    config: RunConfig,
    clock,
    *,
    log: RunLog,
    seed_sequence: Optional[np.random.SeedSequence] = None,
    run_dir: Optional[Path] = None,
    predict_fn=None,
) -> RunResult:
    """Alternate adding and merging until the budget is gone.

    Budget is checked strictly before each stage starts; a stage that
    runs out mid-way commits its finished work and ends the run. The
    merging phase is skipped (with log events preserving alternation)
    while fewer than two feature nodes have evaluated children. Each
    stage is followed by a checkpoint and a log flush.
    """
    if seed_sequence is None:
        seed_sequence = np.random.SeedSequence(config.seed)
    adding_params = StageParams(
        n_fe=config.number_of_ideas_data,
        m_mt=config.number_of_ideas_modelling,
        n_selected=config.number_of_selected_node,
        softmax_temperature=config.softmax_temperature,
        merge_epsilon=config.merge_epsilon,
    )
    merging_params = StageParams(
        n_fe=config.number_of_selected_node_merging,
        m_mt=config.number_of_ideas_modelling,
        n_selected=config.number_of_selected_node_merging,
        softmax_temperature=config.softmax_temperature,
        merge_epsilon=config.merge_epsilon,
    )
    policy = _eval_policy(config, predict_fn)
    plain_policy = _eval_policy(config)
    iterations = 0
    budget_out = False
    checkpoint_seq = 0

    def note_budget_out() -> None:
        nonlocal budget_out
        budget_out = True
        log.append(EventKind.BUDGET_EXHAUSTED, elapsed=clock.elapsed(),
                   budget=clock.budget)

    def checkpoint() -> None:
        nonlocal checkpoint_seq
        checkpoint_seq += 1
        if run_dir is not None and config.checkpoint_every_stage:
            path = Path(run_dir) / CHECKPOINT_DIR / f"stage_{checkpoint_seq:04d}.json"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(tree.snapshot(), encoding="utf-8")
            best = tree.best_evaluated_mt(ports.metric)
            log.append(
                EventKind.CHECKPOINT_WRITTEN,
                path=str(path), sequence=checkpoint_seq,
                best_node_id=best.id if best else None,
                best_raw_score=best.raw_score if best else None,
            )
        log.flush()

    while True:
        if clock.exhausted():
            note_budget_out()
            break
        iterations += 1
        tree.iteration = iterations

        # ---- adding ----
        rng = np.random.default_rng(seed_sequence.spawn(1)[0])
        try:
            adding_stage(
                tree, ctx, ports.gen, ports.evaluator, adding_params, ports.metric, rng,
                log=log, clock=clock, policy=policy,
                external_policy=ExternalQueryPolicy(config.rag_policy),
                external_cap=config.external_idea_cap,
                max_add=config.max_add_idea,
                parent_window=config.parent_window,
                selection_mode=SelectionMode(config.selection_mode),
            )
        except BudgetExhausted:
            note_budget_out()
            checkpoint()
            break
        except GeneratorFailure as exc:
            logger.warning("adding stage failed, moving on: %s", exc)
        checkpoint()

        # ---- merging ----
        if clock.exhausted():
            note_budget_out()
            break
        rng = np.random.default_rng(seed_sequence.spawn(1)[0])
        if not config.enable_merging:
            _skip_merging(log, tree, reason="merging disabled")
        else:
            try:
                merging_stage(
                    tree, mem, ports.gen, ports.evaluator, merging_params,
                    ports.metric, rng,
                    ctx=ctx, log=log, clock=clock, policy=plain_policy,
                    resample_k=config.resample_count,
                    proportional_resample=config.sample_top_proportional,
                )
            except InsufficientParents:
                _skip_merging(log, tree, reason="fewer than two eligible feature nodes")
            except BudgetExhausted:
                note_budget_out()
                checkpoint()
                break
            except GeneratorFailure as exc:
                logger.warning("merging stage failed, moving on: %s", exc)
        checkpoint()

    best = tree.best_evaluated_mt(ports.metric)
    log.append(
        EventKind.RUN_FINISHED,
        best_node_id=best.id if best else None,
        best_raw_score=best.raw_score if best else None,
        iterations=iterations,
        budget_exhausted=budget_out,
    )
    log.flush()
    return RunResult(
        tree=tree,
        best_node_id=best.id if best else None,
        best_raw_score=best.raw_score if best else None,
        iterations=iterations,
        budget_exhausted=budget_out,
        run_dir=Path(run_dir) if run_dir is not None else None,
    )


def _skip_merging(log: RunLog, tree: IdeationTree, reason: str) -> None:
    log.append(EventKind.STAGE_STARTED, stage="merging", iteration=tree.iteration)
    log.append(EventKind.SKIPPED_STAGE, stage="merging", iteration=tree.iteration,
               reason=reason)
    log.append(EventKind.STAGE_FINISHED, stage="merging", iteration=tree.iteration,
               outcome="skipped")


# =====================================================================
# Whole-run driver
# =====================================================================

def execute_run(
    config: RunConfig,
    ports: PortSet,
    out_dir: Path,
    dataset_dir: Optional[Path] = None,
) -> RunResult:
    """Setup → initialize → main loop, with the run directory laid out
    for later reporting and replay."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dump_config(config, out_dir / CONFIG_COPY_FILENAME)
    clock = ports.clock
    log = RunLog(clock=clock, path=out_dir / LOG_FILENAME)

    setup = pipeline_setup(dataset_dir or Path("."), ports.stages, config)
    log.append(
        EventKind.RUN_STARTED,
        seed=config.seed,
        budget_minutes=config.time_run_minutes,
        metric=setup.metric.to_dict(),
        task_rows=setup.task.row_count,
        split_strategy=setup.plan.strategy,
        subset=setup.plan.use_subset,
    )

    ctx = ContextState()
    ctx.append(SegmentTag.READER, setup.task.description)
    seed_sequence = np.random.SeedSequence(config.seed)
    init_rng = np.random.default_rng(seed_sequence.spawn(1)[0])
    try:
        tree = initialize_tree(
            ctx, ports.gen, ports.evaluator, config, init_rng,
            metric=ports.metric, log=log,
        )
    except InitializationFailure:
        log.flush()
        raise

    predict_fn = None
    if config.predict_before_evaluate and ports.predictor is not None:
        anchor_set = _build_anchors(tree, ports, config, ctx, log)
        if anchor_set is not None:
            predictor = ports.predictor
            dataset_description = setup.task.description

            def predict_fn(text: str) -> float:
                return predictor.predict(text, anchor_set, dataset_description)

    mem = MergeMemory(theta_fail=config.theta_fail)
    result = run_main_loop(
        tree, ctx, ports, mem, config, clock,
        log=log, seed_sequence=seed_sequence, run_dir=out_dir,
        predict_fn=predict_fn,
    )
    (out_dir / FINAL_SNAPSHOT_FILENAME).write_text(tree.snapshot(), encoding="utf-8")
    (out_dir / RESULT_FILENAME).write_text(
        json.dumps(
            {
                "best_node_id": result.best_node_id,
                "best_raw_score": result.best_raw_score,
                "iterations": result.iterations,
                "budget_exhausted": result.budget_exhausted,
                "elapsed_minutes": clock.elapsed(),
                "metric": ports.metric.to_dict(),
            },
            indent=2, sort_keys=True,
        ),
        encoding="utf-8",
    )
    result.run_dir = out_dir
    result.setup = setup
    return result


def _build_anchors(tree, ports: PortSet, config: RunConfig, ctx, log) -> Optional[AnchorSet]:
    """Anchor evaluations happen once, before the loop, outside the
    budget gate (like initialization). Failure to build anchors turns
    prediction off rather than killing the run."""
    architectures = list(ports.architectures) if ports.architectures else None
    if architectures is None:
        fe_nodes = tree.fe_nodes()
        anchor_fe = max(
            fe_nodes,
            key=lambda n: (
                ports.metric.orient(n.aggregated_score)
                if n.aggregated_score is not None else float("-inf"),
                -n.id,
            ),
        )
        architectures = ports.gen.propose_mt(anchor_fe, ctx, config.number_of_ideas_modelling)
    try:
        return build_anchor_set(
            tree, ports.evaluator, architectures, ports.metric,
            min_anchors=config.number_of_ideas_min,
            max_anchors=config.number_of_ideas_max,
            log=log,
        )
    except Exception as exc:
        logger.warning("anchor construction failed, prediction disabled: %s", exc)
        return None


# =====================================================================
# Replay
# =====================================================================

def replay(log_path: Path) -> IdeationTree:
    """Rebuild the final tree from the event log alone, no ports
    involved. The result must match the run's final snapshot exactly."""
    events = read_log(Path(log_path))
    return replay_events(events)


def replay_events(events: list[Event]) -> IdeationTree:
    tree: Optional[IdeationTree] = None
    for event in events:
        if event.kind is EventKind.NODE_PROPOSED:
            node = Node.from_dict(event.payload["node"])
            if tree is None:
                if node.level is not NodeLevel.EDA:
                    raise CorruptLog("first proposed node is not the root")
                tree = IdeationTree.create(node.idea_text)
                continue
            tree.add_node(node.parent_id, node)
        elif tree is None:
            continue
        elif event.kind is EventKind.NODE_EVALUATED:
            node_id = event.payload["node_id"]
            if event.payload["status"] == "evaluated":
                tree.mark_evaluated(node_id, event.payload["raw_score"])
            else:
                tree.mark_failed(node_id)
        elif event.kind is EventKind.PREDICTION_MADE:
            node = tree.nodes[event.payload["node_id"]]
            node.predicted_score = event.payload["predicted"]
        elif event.kind is EventKind.STAGE_STARTED:
            tree.iteration = event.payload["iteration"]
    if tree is None:
        raise CorruptLog("log contains no proposed nodes")
    return backpropagate(tree)


def verify_replay(run_dir: Path) -> bool:
    """True iff the log replays to exactly the final snapshot."""
    run_dir = Path(run_dir)
    log_path = run_dir / LOG_FILENAME
    snapshot_path = run_dir / FINAL_SNAPSHOT_FILENAME
    if not log_path.exists() or not snapshot_path.exists():
        raise MissingRunArtifacts(
            f"need both {LOG_FILENAME} and {FINAL_SNAPSHOT_FILENAME} in {run_dir}"
        )
    rebuilt = replay(log_path)
    return rebuilt.snapshot() == snapshot_path.read_text(encoding="utf-8")
