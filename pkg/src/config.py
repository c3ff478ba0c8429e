import logging
import os
from typing import Optional
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


def _default_threads() -> str:
    return str(os.cpu_count() or 1)


class Config:
    """Configuration with validation and sensible defaults."""

    # Parallel replicates (wall time only, never results)
    THREADS: int = int(os.getenv('MSFI_THREADS', _default_threads()))
    BATCH_SIZE: int = int(os.getenv('MSFI_BATCH_SIZE', '64'))

    # Output
    OUTPUT_DIR: str = os.getenv('MSFI_OUTPUT_DIR', 'results')

    # Quadrature
    QUAD_EPSABS: float = float(os.getenv('MSFI_QUAD_EPSABS', '1e-12'))
    QUAD_EPSREL: float = float(os.getenv('MSFI_QUAD_EPSREL', '1e-10'))
    QUAD_LIMIT: int = int(os.getenv('MSFI_QUAD_LIMIT', '400'))

    # Gaussian synthesis: negative modes above -SPECTRAL_TOL * sigma^2 are clipped
    SPECTRAL_TOL: float = float(os.getenv('MSFI_SPECTRAL_TOL', '1e-10'))

    # System
    LOG_LEVEL: str = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FILE: Optional[str] = os.getenv('LOG_FILE') or None

    @classmethod
    def validate(cls) -> bool:
        """Validate configuration. Returns True if valid."""
        invalid = []
        if cls.THREADS < 1:
            invalid.append('MSFI_THREADS')
        if cls.BATCH_SIZE < 1:
            invalid.append('MSFI_BATCH_SIZE')
        if not (0 < cls.QUAD_EPSREL < 1e-6):
            invalid.append('MSFI_QUAD_EPSREL')
        if cls.QUAD_EPSABS <= 0:
            invalid.append('MSFI_QUAD_EPSABS')
        if cls.SPECTRAL_TOL < 0:
            invalid.append('MSFI_SPECTRAL_TOL')
        if not isinstance(getattr(logging, cls.LOG_LEVEL.upper(), None), int):
            invalid.append('LOG_LEVEL')

        if invalid:
            print(f"❌ Invalid configuration: {', '.join(invalid)}")
            return False
        return True
