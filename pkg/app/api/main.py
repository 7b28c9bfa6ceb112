from app.api.deps import CommandRouter
from app.api.routes import evaluate, gradcheck, infer, synth, train

# Set commands
api_router = CommandRouter()
api_router.include_router(synth.router)
api_router.include_router(train.router)
api_router.include_router(infer.router)
api_router.include_router(evaluate.router)
api_router.include_router(gradcheck.router)
