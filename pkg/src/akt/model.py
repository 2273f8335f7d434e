"""The full network: embeddings, two self-attentive encoders over the
question and interaction streams, a strictly causal cross-attention
retriever, and a feedforward prediction head.

Variant map (one flag, everything else shared):

    akt-r        Rasch embeddings, encoders, monotonic decay
    akt-nr       plain embeddings, encoders, monotonic decay
    akt-raw-r    Rasch embeddings, no encoders (x-hat = x, y-hat = y)
    akt-raw-nr   plain embeddings, no encoders
    akt-nr-pos   plain, encoders, learnable positions, standard attention
    akt-nr-fixed plain, encoders, sinusoidal positions, standard attention

Each component draws its initial parameters from its own seeded stream,
so two variants built from the same seed agree bitwise on every tensor
they have in common.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .attention import EncoderBlock, combined_mask
from .data import DatasetMeta, Interaction, InteractionSequence, \
    expand_multi_concept, make_batches
from .embeddings import PositionalEncoding, build_embeddings
from .errors import ConfigError, DataError, ShapeError
from .tensor import Tensor, concat, dropout, matmul, no_grad, sigmoid, softplus, \
    xavier_init

VARIANTS = {
    "akt-r": {"rasch": True, "encoders": True, "positional": "none"},
    "akt-nr": {"rasch": False, "encoders": True, "positional": "none"},
    "akt-raw-r": {"rasch": True, "encoders": False, "positional": "none"},
    "akt-raw-nr": {"rasch": False, "encoders": False, "positional": "none"},
    "akt-nr-pos": {"rasch": False, "encoders": True, "positional": "learnable"},
    "akt-nr-fixed": {"rasch": False, "encoders": True, "positional": "fixed"},
}

ACTIVATION = "softplus"

CHECKPOINT_FORMAT = 1


@dataclass
class AktConfig:
    variant: str = "akt-r"
    dim: int = 256
    heads: int = 8
    dropout: float = 0.05
    encoder_depth: int = 1
    retriever_depth: int = 1
    head_widths: tuple = (512, 256)
    max_len: int = 200
    multi_concept: str = "repeat"
    response_variation: str = "concept"
    ffn_hidden: int = 0
    shared_qk: bool = True
    additive_decay: bool = False
    attn_dropout: bool = True

    @property
    def uses_rasch(self):
        return VARIANTS[self.variant]["rasch"]

    @property
    def positional(self):
        return VARIANTS[self.variant]["positional"]

    @property
    def uses_decay(self):
        return self.positional == "none"

    @property
    def effective_encoder_depth(self):
        if not VARIANTS[self.variant]["encoders"]:
            return 0
        return self.encoder_depth

    def validate(self, meta=None):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choices: "
                              f"{', '.join(sorted(VARIANTS))}")
        if self.dim < 1 or self.heads < 1 or self.dim % self.heads != 0:
            raise ConfigError(f"head count {self.heads} must divide "
                              f"dim {self.dim}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.encoder_depth < 0:
            raise ConfigError("encoder_depth must be >= 0")
        if self.retriever_depth < 1:
            raise ConfigError("retriever_depth must be >= 1")
        if self.max_len < 1:
            raise ConfigError("max_len must be >= 1")
        if self.multi_concept not in ("repeat", "average"):
            raise ConfigError(f"unknown multi-concept mode "
                              f"{self.multi_concept!r}")
        if len(self.head_widths) != 2:
            raise ConfigError("head_widths must name two hidden widths")
        if meta is not None and self.uses_rasch and not meta.has_questions:
            raise ConfigError(
                f"variant {self.variant} needs question IDs, but the "
                f"dataset has none (Rasch difficulties are per question)")


class AktModel:
    """Built network; parameters() exposes every trainable tensor once."""

    def __init__(self, config, meta, seed=0):
        config.validate(meta)
        self.config = config
        self.meta = meta
        self.seed = seed
        streams = [np.random.default_rng(s)
                   for s in np.random.SeedSequence(seed).spawn(5)]
        rng_emb, rng_pos, rng_enc, rng_retr, rng_head = streams

        self.embeddings = build_embeddings(
            meta, config.dim, rng_emb, rasch=config.uses_rasch,
            response_variation=config.response_variation)
        self.position = PositionalEncoding(
            config.positional, config.max_len, config.dim, rng_pos)

        block_args = {
            "ffn_hidden": config.ffn_hidden or None,
            "shared_qk": config.shared_qk,
            "decay": config.uses_decay,
            "additive": config.additive_decay,
            "attn_dropout": config.attn_dropout,
        }
        depth = config.effective_encoder_depth
        self.question_encoder = [
            EncoderBlock(config.dim, config.heads, rng_enc, **block_args)
            for _ in range(depth)]
        self.knowledge_encoder = [
            EncoderBlock(config.dim, config.heads, rng_enc, **block_args)
            for _ in range(depth)]
        self.retriever = [
            EncoderBlock(config.dim, config.heads, rng_retr, **block_args)
            for _ in range(config.retriever_depth)]

        w1, w2 = config.head_widths
        self.head_w1 = xavier_init((2 * config.dim, w1), rng_head)
        self.head_b1 = Tensor(np.zeros(w1), requires_grad=True)
        self.head_w2 = xavier_init((w1, w2), rng_head)
        self.head_b2 = Tensor(np.zeros(w2), requires_grad=True)
        self.head_w3 = xavier_init((w2, 1), rng_head)
        self.head_b3 = Tensor(np.zeros(1), requires_grad=True)

    def parameters(self):
        params = {}
        for name, p in self.embeddings.parameters().items():
            params[f"embeddings.{name}"] = p
        for name, p in self.position.parameters().items():
            params[f"position.{name}"] = p
        for label, blocks in (("question_encoder", self.question_encoder),
                              ("knowledge_encoder", self.knowledge_encoder),
                              ("retriever", self.retriever)):
            for i, block in enumerate(blocks):
                for name, p in block.parameters().items():
                    params[f"{label}.{i}.{name}"] = p
        params.update({
            "head.w1": self.head_w1, "head.b1": self.head_b1,
            "head.w2": self.head_w2, "head.b2": self.head_b2,
            "head.w3": self.head_w3, "head.b3": self.head_b3,
        })
        return params

    def parameter_count(self):
        return sum(p.data.size for p in self.parameters().values())

    def forward(self, batch, training=False, rng=None, collect_trace=False,
                dist_cache=None):
        """Predicted correctness probabilities, shape (B, T).

        Returns (predictions, traces): traces maps block labels to
        AttentionTrace objects when collect_trace is set, else None.
        """
        if batch.length > self.config.max_len:
            raise DataError(f"batch length {batch.length} exceeds the "
                            f"model maximum {self.config.max_len}")
        if dist_cache is not None:
            dist_cache.begin()
        rate = self.config.dropout
        ctx = {"training": training, "rng": rng, "dropout_rate": rate,
               "dist_cache": dist_cache, "collect_trace": collect_trace}

        x = self.embeddings.question_embedding(batch.concepts, batch.questions)
        y = self.embeddings.response_embedding(
            batch.concepts, batch.questions, batch.responses)
        x = self.position.apply(x)
        y = self.position.apply(y)

        inclusive = combined_mask(batch.valid, strict=False)
        strict = combined_mask(batch.valid, strict=True)

        traces = {}
        x_hat = x
        for i, block in enumerate(self.question_encoder):
            x_hat, trace = block.forward(x_hat, x_hat, x_hat, inclusive, **ctx)
            if trace is not None:
                traces[f"question_encoder.{i}"] = trace
        y_hat = y
        for i, block in enumerate(self.knowledge_encoder):
            y_hat, trace = block.forward(y_hat, y_hat, y_hat, inclusive, **ctx)
            if trace is not None:
                traces[f"knowledge_encoder.{i}"] = trace

        knowledge = x_hat
        for i, block in enumerate(self.retriever):
            knowledge, trace = block.forward(knowledge, x_hat, y_hat, strict,
                                             **ctx)
            if trace is not None:
                traces[f"retriever.{i}"] = trace

        # The first position has no strictly-past context; its knowledge
        # state is zero by convention and its prediction rests on x alone.
        first = np.ones((1, batch.length, 1))
        first[0, 0, 0] = 0.0
        knowledge = knowledge * Tensor(first)

        z = concat([knowledge, x], axis=-1)
        z = dropout(z, rate, training, rng)
        hidden = softplus(matmul(z, self.head_w1) + self.head_b1)
        hidden = softplus(matmul(hidden, self.head_w2) + self.head_b2)
        logits = (matmul(hidden, self.head_w3) + self.head_b3)
        preds = sigmoid(logits.reshape(batch.size, batch.length))
        return preds, (traces if collect_trace else None)

    def predict_step(self, history, question_id, concept_ids):
        """Probability of a correct response to the next question.

        history is a list of (question_id, concept_ids, response) tuples in
        dense IDs. The current response is unknown; it enters only the
        interaction stream, which the retriever masks strictly, so any
        filler value gives the same prediction. Multi-tagged questions in
        repeat mode are averaged over their expanded copies.
        """
        interactions = [Interaction(q, tuple(c), r) for q, c, r in history]
        interactions.append(Interaction(question_id, tuple(concept_ids), 0))
        seqs = expand_multi_concept(
            [InteractionSequence("query", interactions)],
            self.config.multi_concept)
        if len(seqs[0]) > self.config.max_len:
            raise DataError(f"history of {len(seqs[0])} interactions exceeds "
                            f"the model maximum {self.config.max_len}")
        batch = make_batches(seqs, batch_size=1,
                             multi_concept=self.config.multi_concept)[0]
        if self.config.multi_concept == "repeat":
            copies = max(len(tuple(concept_ids)), 1)
        else:
            copies = 1
        with no_grad():
            preds, _ = self.forward(batch)
        return float(preds.data[0, -copies:].mean())

    # ---- persistence ----

    def save(self, path, extras=None):
        """Write parameters plus config/meta/ID-map sidecar to an npz file."""
        header = {
            "format": CHECKPOINT_FORMAT,
            "activation": ACTIVATION,
            "config": asdict(self.config),
            "meta": asdict(self.meta),
            "seed": self.seed,
            "extras": extras or {},
        }
        arrays = {name: p.data for name, p in self.parameters().items()}
        np.savez(path, __header__=np.asarray(json.dumps(header)), **arrays)

    @classmethod
    def load(cls, path):
        """Rebuild a model bitwise-identically from save() output."""
        with np.load(path, allow_pickle=False) as bundle:
            header = json.loads(str(bundle["__header__"]))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise ConfigError(f"unsupported checkpoint format "
                                  f"{header.get('format')!r}")
            cfg_dict = dict(header["config"])
            cfg_dict["head_widths"] = tuple(cfg_dict["head_widths"])
            config = AktConfig(**cfg_dict)
            meta = DatasetMeta(**header["meta"])
            model = cls(config, meta, seed=header.get("seed", 0))
            for name, p in model.parameters().items():
                stored = bundle[name]
                if stored.shape != p.data.shape:
                    raise ShapeError(f"checkpoint tensor {name} has shape "
                                     f"{stored.shape}, expected "
                                     f"{p.data.shape}")
                p.data = stored
        model.extras = header.get("extras", {})
        return model


def build(config, meta, seed=0):
    """Construct an AktModel; deterministic in (config, meta, seed)."""
    return AktModel(config, meta, seed=seed)
