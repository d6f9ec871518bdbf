class DivergenceError(RuntimeError):
    """Raised when learner or tuner state stops being finite.

    ``context`` carries whatever the raising site knows about the run
    (seed, episode, step, ...), so the harness can record where it happened.
    """

    def __init__(self, message: str, **context) -> None:
        super().__init__(message)
        self.context = context

    def __str__(self) -> str:
        base = super().__str__()
        if not self.context:
            return base
        ctx = ", ".join(f"{k}={v}" for k, v in self.context.items())
        return f"{base} ({ctx})"
