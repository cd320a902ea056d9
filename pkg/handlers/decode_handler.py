"""
Decoding command
One space-separated id sequence per input line, one hypothesis and score per output line
"""
import logging
from pathlib import Path
from typing import List, Optional

from config import RunConfig
from training import BeamConfig, beam_search_decode, greedy_decode
from .checkpoint_handler import model_from_checkpoint
from .status import EXIT_OK, EXIT_USAGE

logger = logging.getLogger(__name__)


class DecodeInputError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def read_sources(path: Path, vocab_size: int, pad_id: int = 0) -> List[List[int]]:
    sources = []
    for number, line in enumerate(Path(path).read_text().splitlines(), start=1):
        fields = line.split()
        if not fields:
            raise DecodeInputError(number, "empty sequence")
        try:
            ids = [int(f) for f in fields]
        except ValueError:
            raise DecodeInputError(number, f"expected integer ids, got {line.strip()!r}")
        bad = [i for i in ids if not 0 <= i < vocab_size or i == pad_id]
        if bad:
            raise DecodeInputError(number, f"id {bad[0]} outside 1..{vocab_size - 1}")
        sources.append(ids)
    return sources


class DecodeHandler:
    """Handles the decode command"""

    def run(
        self,
        run_config: RunConfig,
        checkpoint: Optional[Path],
        source: Path,
        output: Path,
        beam: Optional[BeamConfig] = None,
        greedy: bool = False,
    ) -> int:
        beam = beam or run_config.beam
        try:
            sources = read_sources(source, run_config.model.src_vocab, run_config.model.pad_id)
        except (DecodeInputError, OSError) as e:
            logger.error(f"{source}: {e}")
            return EXIT_USAGE

        model = model_from_checkpoint(run_config, checkpoint)
        lines = []
        for src in sources:
            hyp = greedy_decode(model, src, beam) if greedy else beam_search_decode(model, src, beam)
            lines.append(f"{' '.join(str(t) for t in hyp.payload)}\t{hyp.score:.6f}")

        Path(output).parent.mkdir(parents=True, exist_ok=True)
        Path(output).write_text("".join(line + "\n" for line in lines))
        mode = "greedy" if greedy else f"beam {beam.beam_size}, alpha {beam.alpha}"
        print(f"decoded {len(lines)} sequences ({mode}) -> {output}")
        return EXIT_OK
