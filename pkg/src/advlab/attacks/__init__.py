"""Adversarial sample generators: streaming Self-MDS, GAN-based GSelf-MDS, composite ASelf-MDS."""

from .base import AttackConfig, PerturbedSet, derived_set, empty_perturbed, sign
from .clustering import ClusterModel, kmeans_cluster, lfa_flip, silhouette_value, silhouette_values
from .composite import PERTURBERS, aself_mds_attack
from .gan import ChangeSet, GanConfig, GanModel, gan_losses, gself_mds_attack, train_gan
from .gradient import (SaliencyResult, fgsm_perturb, jsma_perturb, jsma_select_feature,
                       probability_jacobian, select_feature)
from .selfmds import match_stream, self_attention_target, self_mds_attack

__all__ = [
    "AttackConfig", "PerturbedSet", "derived_set", "empty_perturbed", "sign",
    "ClusterModel", "kmeans_cluster", "lfa_flip", "silhouette_value", "silhouette_values",
    "PERTURBERS", "aself_mds_attack",
    "ChangeSet", "GanConfig", "GanModel", "gan_losses", "gself_mds_attack", "train_gan",
    "SaliencyResult", "fgsm_perturb", "jsma_perturb", "jsma_select_feature",
    "probability_jacobian", "select_feature",
    "match_stream", "self_attention_target", "self_mds_attack",
]
