"""The knowledge-graph actor-critic network.

Four GRU observation encoders (one per text channel, hidden carried across
steps), a multi-head graph-attention embedding of the belief graph, a binary
score encoding, and a graph-masked two-stage action decoder (template head,
then a shared object GRU conditioned by attention over everything decoded so
far).  A critic head and the three-head Q baseline share the same state
embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nm
from . import tokenizer as tok
from .kg import KnowledgeGraph, GraphMask
from .engine import Observation
from .templates import ActionSpace

CHANNELS = ("desc", "game", "inv", "prev")

ABLATIONS = ("full", "a2c", "no-gat", "no-mask", "unsupervised", "seq")


@dataclass(frozen=True)
class AgentConfig:
    emb_dim: int = 32  # subword embedding dim, also the GAT node feature dim
    gru_hidden: int = 64
    obs_dim: int = 64
    gat_heads: int = 4
    gat_dim: int = 64
    score_width: int = 16
    dec_hidden: int = 64
    leaky_slope: float = 0.2
    max_seq_words: int = 4
    ablation: str = "full"

    def __post_init__(self) -> None:
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.gat_heads < 1 or self.emb_dim < 1:
            raise ValueError("gat_heads and emb_dim must be positive")
        if self.score_width < 2:
            raise ValueError("score_width must be at least 2")

    @property
    def use_gat(self) -> bool:
        return self.ablation not in ("a2c", "no-gat")

    @property
    def use_mask(self) -> bool:
        return self.ablation not in ("a2c", "no-mask")

    @property
    def state_dim(self) -> int:
        g = self.gat_dim if self.use_gat else 0
        return g + self.obs_dim + self.score_width


@dataclass
class EncoderState:
    """Per-channel GRU hiddens carried across timesteps within one episode."""

    hiddens: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, hidden_dim: int) -> "EncoderState":
        return cls({ch: np.zeros(hidden_dim) for ch in CHANNELS})


@dataclass
class ActionDistribution:
    """Everything the trainer needs about one decoded action."""

    template_id: int
    object_ids: tuple[int, ...]
    action: str
    log_prob: nm.Tensor  # joint: log pi_T + sum_i log pi_Oi
    template_logits: nm.Tensor
    template_probs: nm.Tensor
    object_logits: list[nm.Tensor]  # pre-mask, one per blank
    object_probs: list[nm.Tensor]  # post-mask, one per blank
    mask_array: np.ndarray  # bool over V as applied to the object decoder
    mask_word_ids: tuple[int, ...]  # supporting word ids (the graph mask)


def score_encode(score: int, width: int) -> np.ndarray:
    """Sign bit plus (width-1)-bit magnitude, clipped to what fits."""
    if width < 2:
        raise ValueError("width must be at least 2")
    bits = np.zeros(width)
    if score < 0:
        bits[0] = 1.0
    magnitude = min(abs(int(score)), 2 ** (width - 1) - 1)
    for i in range(width - 1):
        if magnitude & (1 << (width - 2 - i)):
            bits[i + 1] = 1.0
    return bits


class KgA2CAgent:
    """Parameter container plus all forward passes."""

    def __init__(
        self,
        space: ActionSpace,
        model: tok.SubwordModel,
        cfg: AgentConfig = AgentConfig(),
        seed: int = 0,
        params: nm.ParameterSet | None = None,
    ):
        self.space = space
        self.model = model
        self.cfg = cfg
        self.n_templates = len(space.templates)
        self.n_vocab = len(space.vocabulary)
        self.params = params if params is not None else self._build(seed)
        self.gat_calls = 0  # ablation bookkeeping: no-gat must never embed
        self._encode_cache: dict[str, tuple[int, ...]] = {}
        self._feature_cache: dict[tuple, nm.Tensor] = {}

    # -- parameters ------------------------------------------------------

    def _build(self, seed: int) -> nm.ParameterSet:
        cfg = self.cfg
        p = nm.ParameterSet(seed)
        p.add("emb", (len(self.model), cfg.emb_dim), "embedding")
        for ch in CHANNELS:
            p.gru(f"enc.{ch}.gru", cfg.emb_dim, cfg.gru_hidden)
        p.add("enc.combine.W", (4 * cfg.gru_hidden, cfg.obs_dim))
        p.add("enc.combine.b", (cfg.obs_dim,), "bias")
        for k in range(cfg.gat_heads):
            p.add(f"gat.h{k}.W", (cfg.emb_dim, cfg.emb_dim))
            p.add(f"gat.h{k}.p", (2 * cfg.emb_dim,))
        p.add("gat.out.W", (cfg.gat_heads * cfg.emb_dim, cfg.gat_dim))
        p.add("gat.out.b", (cfg.gat_dim,), "bias")
        s_dim = cfg.state_dim
        p.gru("dec.tmpl.gru", s_dim, cfg.dec_hidden)
        p.add("dec.tmpl.W", (cfg.dec_hidden, self.n_templates))
        p.add("dec.tmpl.b", (self.n_templates,), "bias")
        p.gru("dec.obj.gru", cfg.dec_hidden, cfg.dec_hidden)
        p.add("dec.obj.W", (cfg.dec_hidden, self.n_vocab))
        p.add("dec.obj.b", (self.n_vocab,), "bias")
        p.add("dec.tmpl_emb", (self.n_templates, cfg.dec_hidden), "embedding")
        p.add("dec.obj_emb", (self.n_vocab, cfg.dec_hidden), "embedding")
        p.add("dec.ctx.W", (s_dim, cfg.dec_hidden))
        p.add("dec.query.W", (s_dim, cfg.dec_hidden))
        p.add("critic.W1", (s_dim, cfg.dec_hidden))
        p.add("critic.b1", (cfg.dec_hidden,), "bias")
        p.add("critic.w2", (cfg.dec_hidden,))
        p.add("critic.b2", (), "bias")
        p.add("tdqn.tmpl.W", (s_dim, self.n_templates))
        p.add("tdqn.tmpl.b", (self.n_templates,), "bias")
        p.add("tdqn.obj1.W", (s_dim, self.n_vocab))
        p.add("tdqn.obj1.b", (self.n_vocab,), "bias")
        p.add("tdqn.obj2.W", (s_dim, self.n_vocab))
        p.add("tdqn.obj2.b", (self.n_vocab,), "bias")
        p.add("seq.init.W", (s_dim, cfg.dec_hidden))
        p.add("seq.init.b", (cfg.dec_hidden,), "bias")
        p.gru("seq.gru", cfg.dec_hidden, cfg.dec_hidden)
        p.add("seq.emb", (self.n_vocab + 1, cfg.dec_hidden), "embedding")
        p.add("seq.W", (cfg.dec_hidden, self.n_vocab + 1))
        p.add("seq.b", (self.n_vocab + 1,), "bias")
        return p

    # -- encoders ---------------------------------------------------------

    def _token_ids(self, text: str) -> tuple[int, ...]:
        cached = self._encode_cache.get(text)
        if cached is None:
            cached = tuple(tok.encode(self.model, text.lower()))
            self._encode_cache[text] = cached
        return cached

    def encode_observation(
        self, obs: Observation, enc: EncoderState
    ) -> tuple[nm.Tensor, EncoderState]:
        """Per-channel GRU over subword embeddings, carried hidden in, new
        hidden out; concatenated finals go through one linear layer."""
        p = self.params
        emb = p["emb"]
        finals = []
        new_hiddens: dict[str, np.ndarray] = {}
        texts = {
            "desc": obs.o_desc,
            "game": obs.o_game,
            "inv": obs.o_inv,
            "prev": obs.a_prev,
        }
        for ch in CHANNELS:
            ids = self._token_ids(texts[ch])
            h = nm.Tensor(enc.hiddens[ch])
            gp = p.gru_params(f"enc.{ch}.gru")
            if ids:
                rows = nm.embedding(emb, ids)
                xs = [nm.row(rows, i) for i in range(len(ids))]
                h = nm.gru_sequence(xs, h, gp)
            finals.append(h)
            new_hiddens[ch] = h.data.copy()
        o_t = nm.add(
            nm.matmul(nm.concat(finals), p["enc.combine.W"]), p["enc.combine.b"]
        )
        return o_t, EncoderState(new_hiddens)

    def clear_step_caches(self) -> None:
        """Drop cached feature subgraphs; call after every parameter update."""
        self._feature_cache: dict[tuple, nm.Tensor] = {}

    def _node_feature(self, node: str, graph: KnowledgeGraph) -> nm.Tensor:
        """Average subword embeddings of the entity plus the averaged
        embeddings of its incoming relations.  Cached per parameter version:
        the same node with the same incoming relations repeats across workers
        and steps within one update, and sharing the subgraph accumulates
        gradient correctly."""
        rels = tuple(sorted(rel for _, rel, o in graph.in_edges(node)))
        key = (node, rels)
        cached = self._feature_cache.get(key)
        if cached is not None:
            return cached
        emb = self.params["emb"]
        ids = self._token_ids(node)
        ent = (
            nm.mean(nm.embedding(emb, ids), axis=0)
            if ids
            else nm.Tensor(np.zeros(self.cfg.emb_dim))
        )
        rel_vecs = []
        for rel in rels:
            rel_ids = self._token_ids(rel.replace("_", " "))
            if rel_ids:
                rel_vecs.append(nm.mean(nm.embedding(emb, rel_ids), axis=0))
        feat = nm.add(ent, nm.mean(nm.stack0(rel_vecs), axis=0)) if rel_vecs else ent
        self._feature_cache[key] = feat
        return feat

    def gat_embed(self, graph: KnowledgeGraph) -> nm.Tensor:
        """Multi-head attention over the graph neighbourhood (directed edges
        plus self-loops), head outputs concatenated, mean-pooled over nodes,
        then one linear layer under tanh.

        e_ij = LeakyReLU(p . (W h_i (+) W h_j)) is computed as
        p[:F] . u_i + p[F:] . u_j, which is the same bilinear form without
        per-edge concatenation.
        """
        self.gat_calls += 1
        cfg = self.cfg
        p = self.params
        nodes = sorted(graph.nodes())
        feats = nm.stack0([self._node_feature(n, graph) for n in nodes])
        index = {n: i for i, n in enumerate(nodes)}
        neighbors: list[list[int]] = [[i] for i in range(len(nodes))]
        for s, _, o in sorted(graph.triples):
            j, i = index[s], index[o]
            if j not in neighbors[i]:
                neighbors[i].append(j)

        per_head: list[list[nm.Tensor]] = []
        dim = cfg.emb_dim
        for k in range(cfg.gat_heads):
            u = nm.matmul(feats, p[f"gat.h{k}.W"])  # (N, F)
            pk = p[f"gat.h{k}.p"]
            a_self = nm.matmul(u, nm.slice1d(pk, 0, dim))  # (N,)
            a_peer = nm.matmul(u, nm.slice1d(pk, dim, 2 * dim))  # (N,)
            outs = []
            for i in range(len(nodes)):
                nbrs = neighbors[i]
                e = nm.leaky_relu(
                    nm.add(nm.gather(a_peer, nbrs), nm.pick(a_self, i)),
                    cfg.leaky_slope,
                )
                alpha = nm.softmax(e)
                outs.append(nm.sigmoid(nm.matmul(alpha, nm.embedding(u, nbrs))))
            per_head.append(outs)

        per_node = [
            nm.concat([per_head[k][i] for k in range(cfg.gat_heads)])
            for i in range(len(nodes))
        ]
        pooled = nm.mean(nm.stack0(per_node), axis=0)
        return nm.tanh(nm.add(nm.matmul(pooled, p["gat.out.W"]), p["gat.out.b"]))

    def state_embedding(
        self,
        obs: Observation,
        graph: KnowledgeGraph,
        enc: EncoderState,
    ) -> tuple[nm.Tensor, EncoderState]:
        """s_t = g_t (+) o_t (+) c_t (g_t dropped in the no-gat/a2c paths)."""
        o_t, enc2 = self.encode_observation(obs, enc)
        c_t = nm.Tensor(score_encode(obs.score, self.cfg.score_width))
        parts = []
        if self.cfg.use_gat:
            parts.append(self.gat_embed(graph))
        parts.extend([o_t, c_t])
        return nm.concat(parts), enc2

    # -- decoders ----------------------------------------------------------

    def _decoder_mask(self, mask: GraphMask) -> tuple[np.ndarray, tuple[int, ...]]:
        word_ids = tuple(
            sorted(self.space.word_id(w) for w in mask.words)
        )
        arr = np.zeros(self.n_vocab, dtype=bool)
        if self.cfg.use_mask:
            arr[list(word_ids)] = True
        else:
            arr[:] = True
        return arr, word_ids

    def decode_action(
        self,
        s_t: nm.Tensor,
        mask: GraphMask,
        rng: np.random.Generator | None = None,
        mode: str = "sample",
    ) -> ActionDistribution:
        """Template head first, then one object step per blank, each step
        attending over the state, the template, and earlier objects."""
        if mode not in ("sample", "greedy"):
            raise ValueError(f"unknown decode mode {mode!r}")
        if mode == "sample" and rng is None:
            raise ValueError("sampling requires an rng")
        cfg = self.cfg
        p = self.params

        h_t = nm.gru_cell(
            s_t, nm.Tensor(np.zeros(cfg.dec_hidden)), p.gru_params("dec.tmpl.gru")
        )
        t_logits = nm.add(nm.matmul(h_t, p["dec.tmpl.W"]), p["dec.tmpl.b"])
        t_probs = nm.softmax(t_logits)
        tid = self._choose(t_probs.data, rng, mode)
        log_prob = nm.log(nm.pick(t_probs, tid))

        mask_arr, mask_ids = self._decoder_mask(mask)
        template = self.space.templates[tid]
        context = [
            nm.matmul(s_t, p["dec.ctx.W"]),
            nm.row(nm.embedding(p["dec.tmpl_emb"], [tid]), 0),
        ]
        query = nm.matmul(s_t, p["dec.query.W"])
        scale = 1.0 / np.sqrt(cfg.dec_hidden)

        object_ids: list[int] = []
        object_logits: list[nm.Tensor] = []
        object_probs: list[nm.Tensor] = []
        h_o = nm.Tensor(np.zeros(cfg.dec_hidden))
        obj_gru = p.gru_params("dec.obj.gru")
        for _ in range(template.blanks):
            stacked = nm.stack0(context)
            attn = nm.softmax(nm.mul(nm.matmul(stacked, query), nm.Tensor(scale)))
            ctx_vec = nm.matmul(attn, stacked)
            h_o = nm.gru_cell(ctx_vec, h_o, obj_gru)
            o_logits = nm.add(nm.matmul(h_o, p["dec.obj.W"]), p["dec.obj.b"])
            o_probs = nm.softmax(o_logits, mask=mask_arr)
            oid = self._choose(o_probs.data, rng, mode)
            log_prob = nm.add(log_prob, nm.log(nm.pick(o_probs, oid)))
            object_ids.append(oid)
            object_logits.append(o_logits)
            object_probs.append(o_probs)
            context.append(nm.row(nm.embedding(p["dec.obj_emb"], [oid]), 0))

        words = [self.space.vocabulary[i] for i in object_ids]
        return ActionDistribution(
            template_id=tid,
            object_ids=tuple(object_ids),
            action=self.space.instantiate(tid, words),
            log_prob=log_prob,
            template_logits=t_logits,
            template_probs=t_probs,
            object_logits=object_logits,
            object_probs=object_probs,
            mask_array=mask_arr,
            mask_word_ids=mask_ids,
        )

    @staticmethod
    def _choose(probs: np.ndarray, rng: np.random.Generator | None, mode: str) -> int:
        if mode == "greedy":
            return int(np.argmax(probs))  # ties go to the lowest index
        p = probs / probs.sum()
        return int(rng.choice(len(p), p=p))

    def critic_value(self, s_t: nm.Tensor) -> nm.Tensor:
        p = self.params
        h = nm.tanh(nm.add(nm.matmul(s_t, p["critic.W1"]), p["critic.b1"]))
        return nm.add(nm.matmul(h, p["critic.w2"]), p["critic.b2"])

    def tdqn_heads(self, s_t: nm.Tensor) -> tuple[nm.Tensor, nm.Tensor, nm.Tensor]:
        """Q over templates and over the vocabulary for each of two blanks."""
        p = self.params
        q_t = nm.add(nm.matmul(s_t, p["tdqn.tmpl.W"]), p["tdqn.tmpl.b"])
        q_1 = nm.add(nm.matmul(s_t, p["tdqn.obj1.W"]), p["tdqn.obj1.b"])
        q_2 = nm.add(nm.matmul(s_t, p["tdqn.obj2.W"]), p["tdqn.obj2.b"])
        return q_t, q_1, q_2

    def tdqn_greedy_action(self, s_t: nm.Tensor) -> str:
        q_t, q_1, q_2 = self.tdqn_heads(s_t)
        tid = int(np.argmax(q_t.data))
        template = self.space.templates[tid]
        slot_qs = (q_1, q_2)
        words = [
            self.space.vocabulary[int(np.argmax(slot_qs[i].data))]
            for i in range(template.blanks)
        ]
        return self.space.instantiate(tid, words)

    # -- word-by-word decoder (seq ablation) --------------------------------

    def seq_decode(
        self,
        s_t: nm.Tensor,
        rng: np.random.Generator | None = None,
        mode: str = "sample",
    ) -> tuple[list[int], list[nm.Tensor], nm.Tensor]:
        """Decode up to max_seq_words vocabulary words with an early stop
        token.  Returns (word ids, per-position logits incl. the stop step,
        joint log-prob of the emitted sequence)."""
        cfg = self.cfg
        p = self.params
        stop_id = self.n_vocab
        h = nm.tanh(nm.add(nm.matmul(s_t, p["seq.init.W"]), p["seq.init.b"]))
        gp = p.gru_params("seq.gru")
        words: list[int] = []
        logits_seq: list[nm.Tensor] = []
        log_prob: nm.Tensor | None = None
        for _ in range(cfg.max_seq_words):
            logits = nm.add(nm.matmul(h, p["seq.W"]), p["seq.b"])
            probs = nm.softmax(logits)
            wid = self._choose(probs.data, rng, mode)
            logits_seq.append(logits)
            lp = nm.log(nm.pick(probs, wid))
            log_prob = lp if log_prob is None else nm.add(log_prob, lp)
            if wid == stop_id:
                break
            words.append(wid)
            h = nm.gru_cell(nm.row(nm.embedding(p["seq.emb"], [wid]), 0), h, gp)
        assert log_prob is not None
        return words, logits_seq, log_prob

    def seq_action_text(self, word_ids: list[int]) -> str:
        return " ".join(self.space.vocabulary[i] for i in word_ids)
