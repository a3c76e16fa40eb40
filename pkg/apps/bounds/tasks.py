"""
Celery tasks for the bounds app.
"""

from celery import shared_task
import logging

from apps.pipeline.artifacts import load_model
from apps.sim.plants import get_plant
from .coverage import chunk_seeds, count_hits, envelope_threshold

logger = logging.getLogger(__name__)


@shared_task
def coverage_chunk(model_path: str, plant_name: str, scale, mode: str, sigma_bar,
                   seed, chunk_index: int, n_chunks: int, chunk_trials: int) -> int:
    """Count envelope hits for one Monte-Carlo chunk."""
    try:
        model = load_model(model_path)
        plant = get_plant(plant_name)
        threshold = envelope_threshold(model, scale, mode, sigma_bar)
        seed_seq = chunk_seeds(seed, n_chunks)[chunk_index]
        hits = count_hits(model, plant.drift, plant.state_box, threshold, mode,
                          seed_seq, chunk_trials)
        logger.info(f"Coverage chunk {chunk_index + 1}/{n_chunks}: {hits}/{chunk_trials} hits")
        return hits

    except Exception as e:
        logger.error(f"Failed to evaluate coverage chunk {chunk_index}: {e}")
        raise
