import pytest

from fashionrec import id_embedder, title_embedder
from fashionrec.corpus import (
    SynthSpec,
    leave_one_out_split,
    planted_structure,
    synth_corpus,
    synth_querylog,
)
from fashionrec.memory import BaselineEncoder, build_memory
from fashionrec.retrieval import build_title_index


SPEC = SynthSpec(num_items=250, num_families=50, num_users=120)
SEED = 11


@pytest.fixture(scope="session")
def corpus_bundle():
    catalog, seqs = synth_corpus(SPEC, seed=SEED)
    return catalog, seqs


@pytest.fixture(scope="session")
def catalog(corpus_bundle):
    return corpus_bundle[0]


@pytest.fixture(scope="session")
def seqs(corpus_bundle):
    return corpus_bundle[1]


@pytest.fixture(scope="session")
def planted(catalog):
    return planted_structure(catalog)


@pytest.fixture(scope="session")
def split(seqs):
    return leave_one_out_split(seqs)


@pytest.fixture(scope="session")
def querylog(catalog):
    return synth_querylog(catalog)


@pytest.fixture(scope="session")
def encoder():
    return BaselineEncoder()


@pytest.fixture(scope="session")
def mem(querylog, catalog, encoder):
    return build_memory(querylog, catalog, encoder)


@pytest.fixture(scope="session")
def title_pairs(catalog, planted):
    return [
        (planted.queries[stem], catalog[m].title)
        for stem, members in planted.families.items()
        for m in members
    ]


@pytest.fixture(scope="session")
def title_model(title_pairs):
    model, trace = title_embedder.train(title_pairs, title_embedder.TrainConfig())
    assert all(t >= 0 for t in trace)
    return model


@pytest.fixture(scope="session")
def title_index(catalog, title_model):
    return build_title_index(catalog, title_model)


@pytest.fixture(scope="session")
def id_table(split, catalog):
    table, trace = id_embedder.train_id_model(
        split.train, catalog, id_embedder.IdTrainConfig(epochs=10)
    )
    assert trace[-1] < trace[0]
    return table


@pytest.fixture(scope="session")
def truths(split, catalog):
    return {p.user_id: catalog[p.truth] for p in split.test}
