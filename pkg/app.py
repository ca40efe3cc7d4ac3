from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, ConfigDict, Field
from src.services.stub import stub_completion, stub_embedding
from src.logging_conf import setup_logging
import config
import base64
import time
import numpy as np
from typing import Any, Dict, List, Optional, Union


app = FastAPI(
    title="MaxSim Stub Endpoints",
    description="""
    Deterministic OpenAI-compatible chat and embedding endpoints.

    Lets the describe and embed stages run end to end without model access:

    * **Chat completions**: a few scene sentences chosen by a digest of the request
    * **Embeddings**: signed hashed bag-of-words vectors
    """,
    version="1.0.0",
    tags_metadata=[
        {"name": "Health", "description": "Service status"},
        {"name": "OpenAI", "description": "OpenAI-compatible stub endpoints"},
    ],
)

logger = setup_logging()
start_ts = time.time()


class ChatRequest(BaseModel):
    model_config = ConfigDict(extra="allow")

    model: str
    messages: List[Dict[str, Any]] = Field(min_length=1)
    max_tokens: Optional[int] = None
    temperature: Optional[float] = None


class EmbeddingRequest(BaseModel):
    model_config = ConfigDict(extra="allow")

    model: str
    input: Union[str, List[str]]
    encoding_format: Optional[str] = None


@app.get("/health", tags=["Health"], summary="Health Check")
def health():
    return {"status": "ok", "uptimeSec": int(time.time() - start_ts)}


@app.post("/v1/chat/completions", tags=["OpenAI"], summary="Chat completion")
def chat_completions(req: ChatRequest):
    if req.temperature not in (None, 0, 0.0):
        raise HTTPException(status_code=400, detail="stub only decodes greedily (temperature 0)")
    text = stub_completion(req.messages)
    if req.max_tokens is not None:
        text = " ".join(text.split()[:req.max_tokens])
    tokens = len(text.split())
    logger.info("stub.chat", extra={"model": req.model, "tokens": tokens})
    return {
        "id": "chatcmpl-stub",
        "object": "chat.completion",
        "created": int(start_ts),
        "model": req.model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop",
        }],
        "usage": {"prompt_tokens": 0, "completion_tokens": tokens, "total_tokens": tokens},
    }


@app.post("/v1/embeddings", tags=["OpenAI"], summary="Embeddings")
def embeddings(req: EmbeddingRequest):
    texts = [req.input] if isinstance(req.input, str) else req.input
    if not texts:
        raise HTTPException(status_code=400, detail="input must not be empty")
    if req.encoding_format not in (None, "float", "base64"):
        raise HTTPException(status_code=400, detail=f"unsupported encoding_format {req.encoding_format}")
    data = []
    for i, text in enumerate(texts):
        vec = stub_embedding(text, config.STUB_EMBED_DIM)
        if req.encoding_format == "base64":
            vec = base64.b64encode(np.asarray(vec, dtype="<f4").tobytes()).decode("ascii")
        data.append({"object": "embedding", "index": i, "embedding": vec})
    tokens = sum(len(t.split()) for t in texts)
    return {
        "object": "list",
        "data": data,
        "model": req.model,
        "usage": {"prompt_tokens": tokens, "total_tokens": tokens},
    }


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=config.APP_PORT)
