"""LLM-augmented sequential fashion recommender pipeline.

Submodules:
    corpus          data model, ingestion, dataset splits, synthetic corpora
    embedcore       vectors, cosine similarity, baseline encoder, exact NN search
    memory          query-product memory (embedded query keys -> product lists)
    promptgen       three-segment prompt construction and output parsing
    generator       generation/perplexity interfaces, mocks, HTTP client, curriculum
    title_embedder  triplet-loss GRU text encoder for titles and queries
    id_embedder     session next-item model exporting an item embedding table
    retrieval       ID/title retrieval and mixup merge; end-to-end recommend
    evalkit         ranking metrics and evaluation drivers
    cli             command-line entry point
"""

__version__ = "0.1.0"
