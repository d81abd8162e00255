"""Learn a label-bigram rule from citations and enforce it during decoding.

In the bundled corpus an AUTHOR field is never directly followed by PAGES.
A rectifier net trained on observed bigrams versus unseen ones should
reject that bigram, and beam search that prunes on the extracted
inequalities never produces it.
"""
import numpy as np

from relu_constraints import planted
from relu_constraints.constraint_extraction import extract_system
from relu_constraints.constraint_features import FeatureTemplate, LabelVocab, make_dataset
from relu_constraints.rectifier_net import TrainConfig, predict, train
from relu_constraints.sequence import MarkovTrainConfig, beam_decode, corpus_token_accuracy, train_markov

train_part, test_part = planted.split(planted.load_bundled())
vocab = LabelVocab.from_corpus(train_part)
template = FeatureTemplate("ngram_labels", 2)
data = make_dataset(template, train_part, vocab, seed=1)
print(f"{len(data.positives)} observed bigrams, {len(data.negatives)} unseen")

net, _ = train(data.dim, 10, data.examples, TrainConfig(seed=1))
system = extract_system(net)
v = np.zeros(data.dim)
v[vocab.labels.index("AUTHOR") * vocab.n_labels + vocab.labels.index("PAGES")] = 1
print(f"{len(system)} inequalities; AUTHOR -> PAGES scored {predict(net, v):+d}")

tagger = train_markov(train_part, MarkovTrainConfig(epochs=1, mode="averaged_perceptron"))
gold = [s.labels for s in test_part]
for name, systems in (("unconstrained", []), ("constrained", [(system, template)])):
    out = [tagger.label_names(beam_decode(tagger, s, systems, 20, fallback=False, vocab=vocab)) for s in test_part]
    bad = sum(("AUTHOR", "PAGES") in set(zip(o, o[1:])) for o in out)
    print(f"{name:14s} token accuracy {100 * corpus_token_accuracy(out, gold):.2f}%, "
          f"{bad} outputs with AUTHOR -> PAGES")
