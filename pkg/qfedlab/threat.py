"""
Adversaries and the differential-privacy baseline.

Label flipping corrupts a malicious node's training windows before training starts. Model
poisoning adds Poisson noise to the values a malicious node shares with the server. The
membership-inference adversary thresholds per-sample losses. The DP defence clips and
noises the server's aggregated update.
"""
from collections import namedtuple
import logging
import numpy as np
import pandas as pd
if __package__ is None or __package__ == '':
    from errors import ConfigurationError, StatisticalPowerError, UndefinedMetricError
    from federation import SharedSubset
    from _utils import HasDfDict
else:
    from .errors import ConfigurationError, StatisticalPowerError, UndefinedMetricError
    from .federation import SharedSubset
    from ._utils import HasDfDict


__all__ = ['PoisonConfig', 'DPConfig', 'AttackConfig', 'InferenceReport', 'POISON_KINDS', 'DEFENSES', 'flip_labels',
           'poisson_noise', 'poison_params', 'poison_subset', 'loss_threshold_attack', 'membership_inference',
           'clip_update', 'dp_defend', 'degradation_report']

logger = logging.getLogger(__name__)

POISON_KINDS = ('none', 'label_flip', 'model_noise')
DEFENSES = ('none', 'dp', 'fedransel')
MIN_INFERENCE_SAMPLES = 50


class PoisonConfig(namedtuple('PoisonConfig', ['kind', 'flip_prob', 'lam', 'malicious_nodes', 'centered'],
                              defaults=('none', 0.8, 0.1, (0, 1), True))):
    def validate(self, n_nodes=None):
        if self.kind not in POISON_KINDS:
            raise ConfigurationError("attack.kind must be one of " + str(POISON_KINDS) + ", got " + repr(self.kind))
        if not (0.0 <= self.flip_prob <= 1.0):
            raise ConfigurationError("attack.flip_prob must be in [0, 1], got " + str(self.flip_prob))
        if self.lam <= 0:
            raise ConfigurationError("attack.lambda must be positive, got " + str(self.lam))
        if self.kind != 'none' and n_nodes is not None:
            bad = [m for m in self.malicious_nodes if not (0 <= m < n_nodes)]
            if bad:
                raise ConfigurationError("attack.malicious_nodes " + str(bad) + " are not node ids of a " + str(n_nodes) + "-node federation")
            if len(set(self.malicious_nodes)) >= n_nodes:
                raise ConfigurationError("attack.malicious_nodes must leave at least one honest node")
        return self

    def is_malicious(self, node_id):
        return self.kind != 'none' and node_id in self.malicious_nodes


class DPConfig(namedtuple('DPConfig', ['norm_bound', 'noise_scale'], defaults=(5.0, 0.2))):
    def validate(self):
        if self.norm_bound <= 0:
            raise ConfigurationError("attack.dp.norm_bound must be positive, got " + str(self.norm_bound))
        if self.noise_scale < 0:
            raise ConfigurationError("attack.dp.noise_scale must be non-negative, got " + str(self.noise_scale))
        return self


class AttackConfig(namedtuple('AttackConfig', ['poison', 'defense', 'dp', 'inference'],
                              defaults=(PoisonConfig(), 'none', DPConfig(), False))):
    """
    `defense` picks the server: 'none' is plain FedAvg, 'dp' is FedAvg with the DP defence,
    'fedransel' is random parameter selection.
    """
    def validate(self, n_nodes=None):
        self.poison.validate(n_nodes)
        self.dp.validate()
        if self.defense not in DEFENSES:
            raise ConfigurationError("attack.defense must be one of " + str(DEFENSES) + ", got " + repr(self.defense))
        return self


class InferenceReport(namedtuple('InferenceReport', ['attack_accuracy', 'threshold', 'member_loss_mean', 'member_loss_median',
                                                     'nonmember_loss_mean', 'nonmember_loss_median', 'n_eval']), HasDfDict):
    DICT_COLUMNS = ['attack_accuracy', 'threshold', 'member_loss_mean', 'member_loss_median', 'nonmember_loss_mean',
                    'nonmember_loss_median', 'n_eval']


def flip_labels(partition, flip_prob, rng):
    """
    Each label flips independently with probability `flip_prob`; features are untouched.

    >>> from qfedlab.data import SequenceSet
    >>> part = SequenceSet(np.zeros((4, 1, 1)), np.array([0, 1, 1, 0]), np.arange(4)[:, None])
    >>> flip_labels(part, 1.0, np.random.default_rng(0)).labels.tolist()
    [1, 0, 0, 1]
    """
    labels = np.asarray(partition.labels)
    flips = rng.random(len(labels)) < flip_prob
    return partition._replace(labels=np.where(flips, 1 - labels, labels))


def poisson_noise(size, lam, rng, centered=True):
    """K ~ Poisson(lam) per entry, minus lam when centered."""
    if lam <= 0:
        raise ConfigurationError("Poisson rate must be positive, got " + str(lam))
    k = rng.poisson(lam, size=size).astype(float)
    return k - lam if centered else k


def poison_params(store, lam, rng, centered=True):
    """A copy of `store` with Poisson noise added to every parameter."""
    poisoned = store.copy()
    poisoned.values[:] += poisson_noise(len(poisoned), lam, rng, centered=centered)
    return poisoned


def poison_subset(subset, lam, rng, centered=True):
    """Adds Poisson noise to the values a node is about to share."""
    keys = list(subset.entries)
    noise = poisson_noise(len(keys), lam, rng, centered=centered)
    return SharedSubset(subset.node_id, {k: subset.entries[k] + float(n) for (k, n) in zip(keys, noise)})


def loss_threshold_attack(member_losses, nonmember_losses, rng, calibration_fraction=0.5):
    """
    Guesses "member" when a sample's loss is at most a threshold. The threshold maximizing
    balanced accuracy on a calibration half is scored on the other half.

    >>> report = loss_threshold_attack(np.full(60, 0.1), np.full(60, 0.9), np.random.default_rng(0))
    >>> report.attack_accuracy, report.threshold
    (1.0, 0.1)
    """
    member_losses = np.asarray(member_losses, dtype=float)
    nonmember_losses = np.asarray(nonmember_losses, dtype=float)
    n = min(len(member_losses), len(nonmember_losses))
    if n < MIN_INFERENCE_SAMPLES:
        raise StatisticalPowerError("Membership inference needs at least " + str(MIN_INFERENCE_SAMPLES) +
                                    " members and non-members, got " + str(len(member_losses)) + " and " + str(len(nonmember_losses)))
    if len(member_losses) != len(nonmember_losses):
        raise ConfigurationError("Member and non-member sets must have equal size, got " +
                                 str(len(member_losses)) + " and " + str(len(nonmember_losses)))
    members = member_losses[rng.permutation(n)]
    nonmembers = nonmember_losses[rng.permutation(n)]
    n_cal = int(round(n * calibration_fraction))
    (cal_m, eval_m) = (members[:n_cal], members[n_cal:])
    (cal_n, eval_n) = (nonmembers[:n_cal], nonmembers[n_cal:])

    candidates = np.concatenate([[-np.inf], np.unique(np.concatenate([cal_m, cal_n]))])
    tpr = (cal_m[None, :] <= candidates[:, None]).mean(axis=1)
    tnr = (cal_n[None, :] > candidates[:, None]).mean(axis=1)
    threshold = float(candidates[np.argmax(0.5 * (tpr + tnr))])

    accuracy = 0.5 * (np.mean(eval_m <= threshold) + np.mean(eval_n > threshold))
    return InferenceReport(float(accuracy), threshold, float(np.mean(member_losses)), float(np.median(member_losses)),
                           float(np.mean(nonmember_losses)), float(np.median(nonmember_losses)), int(len(eval_m) + len(eval_n)))


def membership_inference(model, members, nonmembers, rng):
    """Loss-threshold membership inference against `model`; both sets need `sequences` and `labels`."""
    member_losses = model.per_sample_loss(members.sequences, members.labels)
    nonmember_losses = model.per_sample_loss(nonmembers.sequences, nonmembers.labels)
    return loss_threshold_attack(member_losses, nonmember_losses, rng)


def clip_update(update, norm_bound):
    """
    Scales the update onto the L2 ball of radius `norm_bound` if it lies outside.

    >>> clipped, factor = clip_update({'a': 6.0, 'b': 8.0}, 5.0)
    >>> clipped, factor
    ({'a': 3.0, 'b': 4.0}, 0.5)
    """
    keys = list(update)
    delta = np.array([update[k] for k in keys], dtype=float)
    norm = float(np.linalg.norm(delta))
    factor = norm_bound / norm if norm > norm_bound else 1.0
    return dict(zip(keys, (delta * factor).tolist())), factor


def dp_defend(update, cfg, rng):
    """Clip to `cfg.norm_bound`, then add N(0, noise_scale^2) to every entry."""
    if len(update) == 0:
        raise ConfigurationError("The DP defence needs a nonempty update")
    clipped, factor = clip_update(update, cfg.norm_bound)
    if factor < 1.0:
        logger.debug("DP clipped the aggregated update by %.4f", factor)
    noise = rng.normal(0.0, cfg.noise_scale, size=len(clipped))
    return {k: v + float(e) for ((k, v), e) in zip(clipped.items(), noise)}


def degradation_report(clean, attacked):
    """
    Percentage change per metric, 100 * (attacked - clean) / clean; negative means the
    attack degraded the metric. Accepts dicts or MetricSets.

    >>> degradation_report({'accuracy': 0.90, 'auc': 0.94}, {'accuracy': 0.84, 'auc': 0.89}).round(2)
         metric  clean  attacked  pct_change
    0  accuracy   0.90      0.84       -6.67
    1       auc   0.94      0.89       -5.32
    """
    clean = clean.summary() if hasattr(clean, 'summary') else dict(clean)
    attacked = attacked.summary() if hasattr(attacked, 'summary') else dict(attacked)
    if set(clean) != set(attacked):
        raise ConfigurationError("Metric sets differ: " + str(sorted(clean)) + " vs " + str(sorted(attacked)))
    rows = []
    for metric in clean:
        if clean[metric] == 0:
            raise UndefinedMetricError("Percentage change of " + metric + " is undefined for a clean value of 0")
        rows.append({'metric': metric, 'clean': clean[metric], 'attacked': attacked[metric],
                     'pct_change': 100.0 * (attacked[metric] - clean[metric]) / clean[metric]})
    return pd.DataFrame(rows, columns=['metric', 'clean', 'attacked', 'pct_change'])
