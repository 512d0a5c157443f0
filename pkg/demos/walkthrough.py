"""One pass through the library by hand: data, baseline, each attack, the defence.

Run with ``python3 demos/walkthrough.py``. Takes well under a minute on one core.
"""

import numpy as np

from advlab import data, nn
from advlab.attacks import (AttackConfig, GanConfig, aself_mds_attack, gself_mds_attack,
                            self_mds_attack, train_gan)
from advlab.defence import DefenceConfig, self_train
from advlab.metrics import evaluate


def accuracy(model, ds):
    return evaluate(model, ds).accuracy


# Two Gaussian blobs in 20 dimensions, scaled to the unit box, split 60/20/20.
blobs = data.synth_generate(data.SynthConfig(samples_per_class=300, feature_count=20, seed=0))
blobs, scaler = data.fit_normalize(blobs)
train, val, test = data.split(blobs, seed=0)

init = nn.build_classifier(nn.cnn_spec(20), seed=0, input_width=20)
model, history = nn.train(init, train, nn.TrainConfig())
print(f"baseline: test accuracy {accuracy(model, test):.3f} after {len(history)} epochs")

cfg = AttackConfig()

# Self-MDS: the training split has been seen, the test split arrives as a stream.
stream = data.make_stream(data.Dataset.concat([train, test]), observed_count=len(train))
per = self_mds_attack(stream, model, cfg)
attacked = test.replace(features=per.apply_to(test).features)
print(f"Self-MDS: {len(per)} of {len(test)} arrivals matched and perturbed, "
      f"accuracy {accuracy(model, attacked):.3f}")

# The defence hardens the model on the perturbed training view.
pool = self_mds_attack(data.make_stream(train, 0), model, cfg)
result = self_train(pool, train, model, DefenceConfig())
print(f"  after self-training: {accuracy(result.model, attacked):.3f} "
      f"(consistency {result.consistency[0]:.3f} -> {result.consistency[-1]:.3f})")

# ASelf-MDS with FGSM and JSMA: evasion on the test split.
for perturber in ("FGSM", "JSMA"):
    out = aself_mds_attack(test, model, cfg, [perturber])
    adv = test.replace(features=out.apply_to(test).features)
    print(f"ASelf-MDS-{perturber}: accuracy {accuracy(model, adv):.3f}, "
          f"mean linf {np.mean(out.linf_norms):.3f}")

# ASelf-MDS with label flipping poisons the training labels instead.
out = aself_mds_attack(train, model, cfg, ["LFA"])
poisoned, _ = nn.train(init, out.apply_to(train), nn.TrainConfig())
print(f"ASelf-MDS-LFA: {len(out.diagnostics['flipped'])} labels flipped, "
      f"retrained accuracy {accuracy(poisoned, test):.3f}")

# GSelf-MDS: a GAN fitted to benign traffic emits fakes labelled malware.
benign = train.subset(np.flatnonzero(train.labels == 0))
gan = train_gan(benign, GanConfig(generator_epochs=500))
fakes = gself_mds_attack(gan, 2 * len(benign), seed=0, id_start=blobs.next_id())
poisoned, _ = nn.train(init, data.Dataset.concat([train, fakes.samples]), nn.TrainConfig())
print(f"GSelf-MDS: {len(fakes)} fakes, retrained accuracy {accuracy(poisoned, test):.3f}")
