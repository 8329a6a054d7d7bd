"""Independent brute-force oracles the test suite checks implementations against.

These deliberately avoid the library's decode/verify code paths: output
distributions are computed by enumerating every discrete outcome of the
draft-verify process with the uniform draws integrated out analytically, and
greedy decoding is re-derived from plain argmax steps.
"""

import itertools
from collections import defaultdict

import numpy as np

from dynexec.core import feature_forward


def autoregressive_distribution(next_fn, prompt, length, vocab):
    """Exact probability of every length-N sequence under plain ancestral sampling."""
    out = {}
    for seq in itertools.product(range(vocab), repeat=length):
        prob = 1.0
        ctx = tuple(prompt)
        for tok in seq:
            prob *= float(next_fn(ctx)[tok])
            ctx += (tok,)
        out[seq] = prob
    return out


def decode_output_distribution(target_next, draft_dist_fn, prompt, length, K, vocab):
    """Exact output distribution of the speculative decode process.

    Enumerates, per cycle, every draft path, every accept/reject cut point,
    and every residual/bonus terminal token; the per-position accept
    probability min(1, p/q) and the residual normalize(max(0, p-q)) enter as
    analytic weights rather than sampled coins. Cycles chain through a
    dynamic program over emitted prefixes (the process is Markov in the
    context), and the final cycle's surplus is truncated exactly like the
    implementation's contract says.

    draft_dist_fn(ctx, drafted_prefix) must return the draft distribution for
    the next position; this is the only draft-side knowledge the oracle needs,
    so it covers both token-level and feature-level drafting.
    """
    prompt = tuple(prompt)
    chunk_cache = {}

    def chunk_dist(ctx):
        if ctx in chunk_cache:
            return chunk_cache[ctx]
        out = defaultdict(float)

        def recurse(prefix, qprob, qdists):
            if len(prefix) == K:
                pdists = [np.asarray(target_next(ctx + prefix[:i])) for i in range(K + 1)]
                alive = qprob
                for i in range(K):
                    x = prefix[i]
                    accept = min(1.0, float(pdists[i][x]) / float(qdists[i][x]))
                    rejected = alive * (1.0 - accept)
                    if rejected > 0.0:
                        residual = np.maximum(pdists[i] - qdists[i], 0.0)
                        residual /= residual.sum()
                        for y in np.nonzero(residual)[0]:
                            out[prefix[:i] + (int(y),)] += rejected * float(residual[y])
                    alive *= accept
                if alive > 0.0:
                    bonus = pdists[K]
                    for y in np.nonzero(bonus)[0]:
                        out[prefix + (int(y),)] += alive * float(bonus[y])
                return
            q = np.asarray(draft_dist_fn(ctx, prefix))
            for x in np.nonzero(q)[0]:
                recurse(prefix + (int(x),), qprob * float(q[x]), qdists + [q])

        recurse((), 1.0, [])
        chunk_cache[ctx] = dict(out)
        return chunk_cache[ctx]

    level = {(): 1.0}
    final = defaultdict(float)
    while level:
        nxt = defaultdict(float)
        for emitted, prob in level.items():
            for chunk, chunk_prob in chunk_dist(prompt + emitted).items():
                grown = emitted + chunk
                if len(grown) >= length:
                    final[grown[:length]] += prob * chunk_prob
                else:
                    nxt[grown] += prob * chunk_prob
        level = nxt
    return dict(final)


def max_preservation_deviation(target_model, draft_dist_fn, prompt, length, K):
    """Max absolute gap between the decode output distribution and the target's."""
    vocab = target_model.vocab_size
    decoded = decode_output_distribution(target_model.next_dist, draft_dist_fn,
                                         prompt, length, K, vocab)
    truth = autoregressive_distribution(target_model.next_dist, prompt, length, vocab)
    return max(abs(decoded.get(seq, 0.0) - p) for seq, p in truth.items())


def table_draft_dist_fn(draft_model):
    def fn(ctx, prefix):
        return draft_model.next_dist(ctx + prefix)
    return fn


def eagle_draft_dist_fn(model, extrapolator):
    """Replays the feature-level rollout to get the draft distribution at any
    position of a cycle: true features for the context, extrapolated beyond."""
    def fn(ctx, prefix):
        feats, _ = feature_forward(model, ctx)
        f = feats[-1]
        for tok in prefix:
            f = extrapolator.predict(f, model.embed[tok])
        return model.head_dist(f)
    return fn


def greedy_decode(model, prompt, length):
    """Plain greedy argmax decoding; ties break to the lowest token index."""
    out = []
    ctx = tuple(prompt)
    for _ in range(length):
        tok = int(np.argmax(model.next_dist(ctx)))
        out.append(tok)
        ctx += (tok,)
    return out
