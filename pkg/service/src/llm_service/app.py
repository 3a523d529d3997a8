"""HTTP service implementing the generation wire protocol:

    POST /generate   {"prompt", "max_new_tokens", "temperature", "top_p",
                      "request_id", "greedy"?}            -> {"text"}
    POST /perplexity {"prompt", "response"}               -> {"perplexity"}
    POST /embed      {"texts": [...]}                     -> {"vectors"}
    GET  /health                                          -> {"status", "model"}

``greedy`` is an extension flag for deterministic fixture tests. Malformed
bodies get 4xx from validation; engine failures map to 400 with a message.
"""

from __future__ import annotations

import argparse

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .config import ServiceConfig
from .engine import Engine, build_engine


class GenerateRequest(BaseModel):
    prompt: str
    max_new_tokens: int = Field(default=64, ge=1, le=1024)
    temperature: float = Field(default=0.05, gt=0)
    top_p: float = Field(default=0.95, gt=0, le=1)
    request_id: str = ""
    greedy: bool = False


class PerplexityRequest(BaseModel):
    prompt: str
    response: str = Field(min_length=1)


class EmbedRequest(BaseModel):
    texts: list[str] = Field(min_length=1)


def make_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="generation service")
    app.state.engine = engine

    @app.post("/generate")
    def generate(req: GenerateRequest):
        try:
            text = engine.generate(
                req.prompt,
                max_new_tokens=req.max_new_tokens,
                temperature=req.temperature,
                top_p=req.top_p,
                greedy=req.greedy,
            )
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        return {"text": text}

    @app.post("/perplexity")
    def perplexity(req: PerplexityRequest):
        try:
            value = engine.perplexity(req.prompt, req.response)
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        return {"perplexity": value}

    @app.post("/embed")
    def embed(req: EmbedRequest):
        return {"vectors": engine.embed(req.texts)}

    @app.get("/health")
    def health():
        return {"status": "ok", "model": engine.name}

    return app


def main(argv=None) -> int:
    import uvicorn

    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", help="ServiceConfig JSON file")
    ap.add_argument("--host", default=None)
    ap.add_argument("--port", type=int, default=None)
    args = ap.parse_args(argv)
    config = ServiceConfig.load(args.config) if args.config else ServiceConfig()
    if args.host:
        config.host = args.host
    if args.port:
        config.port = args.port
    try:
        engine = build_engine(config)
    except RuntimeError as e:
        print(f"startup failure: {e}")
        return 1
    uvicorn.run(make_app(engine), host=config.host, port=config.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
