import numpy as np
import pytest
import scipy.sparse as sp

from phishbench.classifiers import (FAMILIES, ModelSpec, TrainedModel,
                                    predict, predict_log_proba, predict_scores,
                                    train)
from phishbench.errors import TrainingError
from phishbench.features import SparseVector, TfidfConfig, fit_tfidf, transform_matrix
from phishbench.evaluation import compute_metrics, split_records, stratified_split

from oracles import oracle_nb, oracle_nb_log_posteriors

FAST_HP = {"RF": {"n_trees": 15}, "MLP": {"epochs": 40}}


def _spec(family, seed=0):
    return ModelSpec(family, seed=seed, hyperparameters=FAST_HP.get(family, {}))


def _dense(rows):
    return sp.csr_matrix(np.asarray(rows, dtype=float))


# --------------------------------------------------------------------------
# contracts
# --------------------------------------------------------------------------

def test_spec_validation():
    with pytest.raises(TrainingError):
        ModelSpec("XGB")
    with pytest.raises(TrainingError):
        ModelSpec("LR", hyperparameters={"depth": 3})


def test_single_class_training_errors():
    X = _dense([[1, 0], [0, 1]])
    with pytest.raises(TrainingError, match="single class"):
        train(ModelSpec("LR"), X, ["benign", "benign"])


def test_too_few_vectors_errors():
    with pytest.raises(TrainingError):
        train(ModelSpec("LR"), _dense([[1.0]]), ["benign"])


def test_mixed_dimension_vectors_error():
    vecs = [SparseVector(2, np.array([0]), np.array([1.0])),
            SparseVector(3, np.array([0]), np.array([1.0]))]
    with pytest.raises(TrainingError, match="dimension"):
        train(ModelSpec("LR"), vecs, ["benign", "phishing"])


def test_predict_dimension_mismatch_errors():
    X = _dense([[1, 0], [0, 1]])
    model = train(ModelSpec("LR"), X, ["phishing", "benign"])
    with pytest.raises(TrainingError, match="dimension"):
        predict(model, _dense([[1, 0, 0]]))


def test_rf_rejects_negative_features():
    X = _dense([[1, -1], [0, 1]])
    with pytest.raises(TrainingError, match="nonnegative"):
        train(ModelSpec("RF"), X, ["phishing", "benign"])


# --------------------------------------------------------------------------
# stated decision rules
# --------------------------------------------------------------------------

def test_lr_zero_weights_score_half_is_phishing():
    X = _dense([[1, 0], [0, 1]])
    model = train(ModelSpec("LR"), X, ["phishing", "benign"])
    model.state["w"] = np.zeros(2)
    model.state["b"] = np.float64(0.0)
    assert predict_scores(model, X).tolist() == [0.5, 0.5]
    assert predict(model, X) == ["phishing", "phishing"]     # threshold inclusive


def test_rf_tie_votes_benign():
    # two hand-built stumps casting opposite votes on every input
    state = {
        "offsets": np.array([0, 3, 6]),
        "feature": np.array([0, -1, -1, 0, -1, -1]),
        "threshold": np.array([0.5, 0.0, 0.0, 0.5, 0.0, 0.0]),
        "left": np.array([1, -1, -1, 1, -1, -1]),
        "right": np.array([2, -1, -1, 2, -1, -1]),
        "value": np.array([0.5, 0.0, 1.0, 0.5, 1.0, 0.0]),
    }
    model = TrainedModel(spec=ModelSpec("RF"), feature_dimension=2,
                         training_fingerprint={}, state=state)
    X = _dense([[0.0, 0.0], [1.0, 0.0]])
    assert predict_scores(model, X).tolist() == [0.5, 0.5]
    assert predict(model, X) == ["benign", "benign"]         # 1-1 tie -> benign


def test_svm_sign_of_margin():
    X = _dense([[1, 0], [0, 1]])
    model = train(ModelSpec("SVM"), X, ["phishing", "benign"])
    model.state["w"] = np.array([2.0, -2.0])
    model.state["b"] = np.float64(0.0)
    assert predict(model, _dense([[1, 0], [0, 1], [0, 0]])) == \
        ["phishing", "benign", "phishing"]                    # margin 0 -> phishing


def test_lr_separable_reaches_training_accuracy_one():
    X = _dense([[1, 0], [0.9, 0.1], [0, 1], [0.1, 0.9]])
    labels = ["phishing", "phishing", "benign", "benign"]
    model = train(ModelSpec("LR"), X, labels)
    assert predict(model, X) == labels


# --------------------------------------------------------------------------
# NB toy oracle
# --------------------------------------------------------------------------

def _nb_toy():
    # phishing doc "win money", benign doc "meeting notes"; vocab of 4
    vocab = {"win": 0, "money": 1, "meeting": 2, "notes": 3}
    rows = [{0: 1.0, 1: 1.0}, {2: 1.0, 3: 1.0}]
    X = sp.csr_matrix(
        (np.array([1.0, 1, 1, 1]), (np.array([0, 0, 1, 1]), np.array([0, 1, 2, 3]))),
        shape=(2, 4))
    labels = ["phishing", "benign"]
    return vocab, rows, X, labels


def test_nb_toy_classifies_win_as_phishing():
    vocab, rows, X, labels = _nb_toy()
    model = train(ModelSpec("NB"), X, labels)
    test = sp.csr_matrix((np.array([1.0]), (np.array([0]), np.array([0]))), shape=(1, 4))
    assert predict(model, test) == ["phishing"]
    # "win money now": "now" is out of vocabulary
    test2 = sp.csr_matrix((np.array([1.0, 1]), (np.array([0, 0]), np.array([0, 1]))),
                          shape=(1, 4))
    assert predict(model, test2) == ["phishing"]


def test_nb_log_posteriors_match_hand_bayes_oracle():
    vocab, rows, X, labels = _nb_toy()
    model = train(ModelSpec("NB"), X, labels)
    log_priors, log_thetas = oracle_nb(rows, [1, 0], n_features=4, alpha=1.0)
    test_rows = [{0: 1.0}, {0: 1.0, 1: 1.0}, {2: 2.0, 3: 1.0}, {0: 0.5, 2: 0.5}]
    for row in test_rows:
        expected = oracle_nb_log_posteriors(row, log_priors, log_thetas)
        data = list(row.values())
        cols = list(row)
        X_test = sp.csr_matrix((np.array(data), (np.zeros(len(cols), dtype=int),
                                                 np.array(cols))), shape=(1, 4))
        got = predict_log_proba(model, X_test)[0]
        assert got[0] == pytest.approx(expected[0], abs=1e-9)
        assert got[1] == pytest.approx(expected[1], abs=1e-9)


def test_log_proba_only_for_nb():
    X = _dense([[1, 0], [0, 1]])
    model = train(ModelSpec("LR"), X, ["phishing", "benign"])
    with pytest.raises(TrainingError):
        predict_log_proba(model, X)


# --------------------------------------------------------------------------
# determinism and purity
# --------------------------------------------------------------------------

def _state_equal(a, b):
    assert a.keys() == b.keys()
    for key in a:
        assert np.array_equal(np.asarray(a[key]), np.asarray(b[key])), key


@pytest.mark.parametrize("family", FAMILIES)
def test_training_deterministic(family, small_corpus):
    plan = stratified_split(small_corpus, 0.7, 0)
    train_recs, test_recs = split_records(small_corpus, plan)
    tfidf = fit_tfidf(train_recs, TfidfConfig(min_doc_freq=1))
    X = transform_matrix(tfidf, train_recs)
    Xt = transform_matrix(tfidf, test_recs)
    labels = [r.label for r in train_recs]
    first = train(_spec(family, seed=3), X, labels)
    second = train(_spec(family, seed=3), X, labels)
    _state_equal(first.state, second.state)
    assert predict(first, Xt) == predict(second, Xt)


@pytest.mark.parametrize("family", FAMILIES)
def test_different_seed_allowed_to_differ_but_runs(family, small_corpus):
    tfidf = fit_tfidf(small_corpus, TfidfConfig(min_doc_freq=1))
    X = transform_matrix(tfidf, small_corpus)
    labels = [r.label for r in small_corpus]
    model = train(_spec(family, seed=11), X, labels)
    scores = predict_scores(model, X)
    assert np.all((scores >= 0) & (scores <= 1))


@pytest.mark.parametrize("family", FAMILIES)
def test_predict_never_mutates_model(family, small_corpus):
    tfidf = fit_tfidf(small_corpus, TfidfConfig(min_doc_freq=1))
    X = transform_matrix(tfidf, small_corpus)
    model = train(_spec(family), X, [r.label for r in small_corpus])
    before = {k: np.asarray(v).copy() for k, v in model.state.items()}
    predict(model, X)
    predict_scores(model, X)
    _state_equal(model.state, before)


# --------------------------------------------------------------------------
# learnability and serialization
# --------------------------------------------------------------------------

@pytest.mark.parametrize("family", FAMILIES)
def test_same_dataset_f1_on_synthetic(family, small_corpus):
    plan = stratified_split(small_corpus, 0.7, 0)
    train_recs, test_recs = split_records(small_corpus, plan)
    tfidf = fit_tfidf(train_recs, TfidfConfig(min_doc_freq=1))
    model = train(_spec(family), transform_matrix(tfidf, train_recs),
                  [r.label for r in train_recs])
    report = compute_metrics(predict(model, transform_matrix(tfidf, test_recs)),
                             [r.label for r in test_recs])
    assert report.f1 >= 0.9, f"{family} f1={report.f1}"


@pytest.mark.parametrize("family", FAMILIES)
def test_model_save_load_round_trip(family, small_corpus, tmp_path):
    tfidf = fit_tfidf(small_corpus, TfidfConfig(min_doc_freq=1))
    X = transform_matrix(tfidf, small_corpus)
    model = train(_spec(family, seed=5), X, [r.label for r in small_corpus],
                  fingerprint={"datasets": ["synth"], "seed": 5})
    path = tmp_path / "model.npz"
    model.save(path)
    loaded = TrainedModel.load(path)
    assert loaded.spec == model.spec
    assert loaded.feature_dimension == model.feature_dimension
    assert loaded.training_fingerprint == model.training_fingerprint
    assert predict(loaded, X) == predict(model, X)
    assert np.allclose(predict_scores(loaded, X), predict_scores(model, X))
