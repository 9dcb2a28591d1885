"""Training strategies (3steps / 2steps / 1step), transfer initialisation and metering."""

import logging
import time
from dataclasses import dataclass, field

from slueco.corpus import USER, inject_speaker_marker
from slueco.energy import RunRecord
from slueco.estimator import SLUTagger
from slueco.metrics import corpus_error_rate
from slueco.selection import select_best  # noqa: F401  (public re-export)

logger = logging.getLogger(__name__)

ENCODER_ASR = "encoder-asr"
ENCODER_SLU = "encoder-slu"
FULL_SLU = "full-slu"
STAGE_KINDS = (ENCODER_ASR, ENCODER_SLU, FULL_SLU)

STRATEGIES = {
    "3steps": (ENCODER_ASR, ENCODER_SLU, FULL_SLU),
    "2steps": (ENCODER_SLU, FULL_SLU),
    "1step": (FULL_SLU,),
}

DEFAULT_HYPERPARAMS = {"n_epochs": 30, "lr": 0.05}


@dataclass
class StagePlan:
    kind: str
    epochs: int
    lr: float
    init_from: object = None  # Checkpoint; filled in while a strategy runs

    def __post_init__(self):
        if self.kind not in STAGE_KINDS:
            raise ValueError(f"unknown stage kind {self.kind!r}")
        if self.epochs < 1:
            raise ValueError("a stage needs at least one epoch")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")

    @property
    def architecture(self):
        return "full" if self.kind == FULL_SLU else "encoder"

    @property
    def target_field(self):
        return "transcript" if self.kind == ENCODER_ASR else "concepts"


@dataclass
class StrategyPlan:
    name: str
    stages: list
    transfer_source: object = None
    hyperparams: dict = field(default_factory=dict)


def plan(strategy_name, hyperparams=None, transfer_source=None):
    """Stage list of a named strategy; ``transfer_source`` seeds the first stage (+PM)."""
    if strategy_name not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy_name!r}; expected one of {sorted(STRATEGIES)}")
    hp = dict(DEFAULT_HYPERPARAMS)
    hp.update(hyperparams or {})
    stages = [StagePlan(kind, int(hp["n_epochs"]), float(hp["lr"])) for kind in STRATEGIES[strategy_name]]
    if transfer_source is not None:
        stages[0].init_from = transfer_source
    name = strategy_name + ("+PM" if transfer_source is not None else "")
    return StrategyPlan(name, stages, transfer_source, hp)


def to_xy(utterances, target_field, speaker_marker=True):
    """Feature matrices (speaker-marked) and target sequences for a list of utterances."""
    X = [inject_speaker_marker(u.features, u.speaker) if speaker_marker else u.features
         for u in utterances]
    y = [list(getattr(u, target_field)) for u in utterances]
    return X, y


def user_turn_error(model, split, target_field="concepts", speaker_marker=True):
    """Error rate (percent) of ``model`` over the user turns of ``split``."""
    users = [u for u in split.utterances if u.speaker == USER]
    X, y = to_xy(users, target_field, speaker_marker)
    return 100.0 * corpus_error_rate(y, model.predict(X))


@dataclass
class StageResult:
    kind: str
    checkpoint: object
    kwh: float
    seconds: float
    best_epoch: int
    dev_error: float
    history: list


def _tagger_params(hyperparams):
    valid = SLUTagger().get_params()
    return {k: v for k, v in hyperparams.items() if k in valid and k not in ("n_epochs", "lr")}


def run_stage(stage, train, dev, meter, hyperparams=None, seed=0, stage_index=0, provenance=None):
    """Train one stage and return its :class:`StageResult`.

    The train split is used in full (wizard turns included); epoch selection
    looks at the user turns of ``dev`` only.
    """
    hp = dict(DEFAULT_HYPERPARAMS)
    hp.update(hyperparams or {})
    marker = hp.get("speaker_marker", True)
    field_ = stage.target_field
    X, y = to_xy(train.utterances, field_, marker)
    dev_users = [u for u in dev.utterances if u.speaker == USER]
    eval_set = to_xy(dev_users, field_, marker) if dev_users else None
    classes = train.word_vocab if field_ == "transcript" else train.label_vocab

    model = SLUTagger(
        architecture=stage.architecture,
        n_epochs=stage.epochs,
        lr=stage.lr,
        random_state=seed + 1000 * stage_index,
        **_tagger_params(hp),
    )
    with meter.session() as reading:
        model.fit(X, y, eval_set=eval_set, classes=classes, init_from=stage.init_from)
    dev_error = model.history_[model.best_epoch_ - 1].get("dev_error", float("nan"))
    prov = dict(provenance or {})
    prov.update(stage_kind=stage.kind, stage_index=stage_index, seed=seed, target=field_)
    ckpt = model.to_checkpoint(**prov)
    logger.info("stage %s: best epoch %d, dev %.2f, %.1fs", stage.kind, model.best_epoch_,
                dev_error, reading["seconds"])
    return StageResult(stage.kind, ckpt, reading["kwh"], reading["seconds"], model.best_epoch_,
                       dev_error, model.history_)


@dataclass
class StrategyResult:
    record: RunRecord
    checkpoint: object
    stages: list


def run_strategy(strategy, corpora, meter, seed=0, run_id=None, corpus_tag=""):
    """Run every stage in order, each starting from its predecessor's best checkpoint.

    ``corpora`` maps ``train``/``dev``/``test`` to splits. The test split is
    only touched after the final stage, for the reported test CER.
    """
    train, dev, test = corpora["train"], corpora["dev"], corpora["test"]
    families = train.feature_families or ["unknown"]
    if len(families) > 1:
        raise ValueError(f"train split mixes feature families {families}")
    results = []
    init = strategy.stages[0].init_from
    start = time.perf_counter()
    for k, stage in enumerate(strategy.stages):
        stage.init_from = init
        res = run_stage(stage, train, dev, meter, strategy.hyperparams, seed=seed, stage_index=k,
                        provenance={"strategy": strategy.name, "source_corpus": corpus_tag})
        results.append(res)
        init = res.checkpoint
    wall = time.perf_counter() - start

    final = SLUTagger.from_checkpoint(init)
    marker = strategy.hyperparams.get("speaker_marker", True)
    field_ = strategy.stages[-1].target_field
    kwh = meter.kwh if meter.mode == "recorded" else sum(r.kwh for r in results)
    record = RunRecord(
        run_id=run_id or f"{strategy.name}-seed{seed}",
        strategy=strategy.name,
        feature_family=families[0],
        kwh=kwh,
        wall_time_s=wall,
        dev_cer=user_turn_error(final, dev, field_, marker),
        test_cer=user_turn_error(final, test, field_, marker),
        corpus=corpus_tag,
    )
    return StrategyResult(record, init, results)
