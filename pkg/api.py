from functools import lru_cache
from typing import Any, Dict, List

import numpy as np
import uvicorn
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from checkpoint import load_checkpoint
from errors import ConfigError, DvdError
from models.siamese import cosine_score
from schemas import (
    EmbedRequest,
    EmbedResponse,
    SearchHit,
    SearchRequest,
    SearchResponse,
    SimilarityRequest,
    SimilarityResponse,
)
from settings import Settings, configure_logging
from training import as_sentence_encoder, embedding_fn

app = FastAPI(
    title="Dual-View Sentence Embedding API",
    description="Sentence embeddings, pair similarity and candidate search from a distilled siamese student",
    version="1.0.0"
)

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class SentenceEncoder:
    """Eval-mode embedding function of one checkpoint."""

    def __init__(self, model, vocab):
        self.model = as_sentence_encoder(model)
        self.vocab = vocab
        self._embed = embedding_fn(self.model, vocab)

    @property
    def dim(self) -> int:
        return self.model.encoder.config.hidden_dim

    def embed(self, sentences: List[str]) -> np.ndarray:
        return self._embed(sentences)


@lru_cache(maxsize=1)
def get_encoder() -> SentenceEncoder:
    """Load the checkpoint named by DVD_CHECKPOINT_PATH once per process."""
    path = Settings.from_env().checkpoint_path
    if not path:
        raise ConfigError("DVD_CHECKPOINT_PATH is not set")
    model, vocab, _, _ = load_checkpoint(path)
    return SentenceEncoder(model, vocab)


def _error(e: Exception) -> HTTPException:
    if isinstance(e, DvdError):
        return HTTPException(status_code=400, detail=str(e))
    return HTTPException(status_code=500, detail=f"Internal server error: {str(e)}")


@app.post("/embed", response_model=EmbedResponse)
async def embed_endpoint(request: EmbedRequest) -> Dict[str, Any]:
    """Embed every sentence of the request.

    Raises:
        HTTPException: 400 for model or input errors, 500 otherwise
    """
    try:
        encoder = get_encoder()
        vectors = encoder.embed(request.sentences)
        return EmbedResponse(embeddings=vectors.tolist(), dim=encoder.dim)
    except Exception as e:
        raise _error(e)


@app.post("/similarity", response_model=SimilarityResponse)
async def similarity_endpoint(request: SimilarityRequest) -> Dict[str, Any]:
    """Cosine similarity of two sentence embeddings."""
    try:
        u, v = get_encoder().embed([request.sentence_a, request.sentence_b])
        return SimilarityResponse(score=cosine_score(u, v))
    except Exception as e:
        raise _error(e)


@app.post("/search", response_model=SearchResponse)
async def search_endpoint(request: SearchRequest) -> Dict[str, Any]:
    """Rank candidates by cosine similarity to the query; ties keep candidate order."""
    try:
        encoder = get_encoder()
        vectors = encoder.embed([request.query] + request.candidates)
        query, candidates = vectors[0], vectors[1:]
        scores = np.array([cosine_score(query, c) for c in candidates])
        order = np.argsort(-scores, kind="stable")[: request.top_k]
        hits = [SearchHit(rank=rank + 1, sentence=request.candidates[i], score=float(scores[i]))
                for rank, i in enumerate(order)]
        return SearchResponse(hits=hits)
    except Exception as e:
        raise _error(e)


@app.get("/health")
async def health_check():
    """Health check endpoint"""
    return {"status": "healthy"}


if __name__ == "__main__":
    settings = Settings.from_env()
    configure_logging(settings.log_level)
    uvicorn.run(app, host=settings.api_host, port=settings.api_port)
