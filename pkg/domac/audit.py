import json
import logging
import os
from functools import wraps
from datetime import datetime, timezone

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

TRAJECTORY_FIELDS = (
    "episode",
    "step",
    "predators",
    "preys",
    "prey_alive",
    "predator_actions",
    "prey_actions",
    "reward",
    "done",
)


def configure_console_logging(level="INFO"):
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO),
                        format=LOG_FORMAT)


def _file_logger(name, path, formatter):
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)

    run_logger = logging.getLogger(name)
    run_logger.setLevel(logging.INFO)
    run_logger.propagate = False

    # a logger is reused across runs in one process; drop stale handlers
    for handler in list(run_logger.handlers):
        run_logger.removeHandler(handler)
        handler.close()

    handler = logging.FileHandler(path)
    handler.setLevel(logging.INFO)
    handler.setFormatter(formatter)
    run_logger.addHandler(handler)
    return run_logger


def configure_run_logging(run_dir):
    """Set up the JSON event log of a training run under <run_dir>/logs"""
    return _file_logger('domac.events', os.path.join(run_dir, 'logs', 'train.log'),
                        logging.Formatter(LOG_FORMAT))


def close_run_logging():
    for name in ('domac.events', 'domac.trajectories'):
        run_logger = logging.getLogger(name)
        for handler in list(run_logger.handlers):
            run_logger.removeHandler(handler)
            handler.close()


def log_event(action, details=None, status="success"):
    """Log a run event with common details as one JSON payload"""
    log_data = {
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "action": action,
        "status": status,
        "details": details or {},
    }
    logging.getLogger('domac.events').info(json.dumps(log_data, default=str))
    return log_data


class TrajectoryRecorder:
    """Line-delimited JSON dump of environment steps.

    One object per step, keys in TRAJECTORY_FIELDS order. Records carry no
    timestamp so dumps of identical runs are identical.
    """

    def __init__(self, path):
        self.path = path
        self.logger = _file_logger('domac.trajectories', path, logging.Formatter('%(message)s'))

    def record(self, episode, state, predator_actions, prey_actions, reward, done):
        row = {
            "episode": int(episode),
            "step": int(state.step_count),
            "predators": state.predator_pos.tolist(),
            "preys": state.prey_pos.tolist(),
            "prey_alive": [bool(a) for a in state.prey_alive],
            "predator_actions": [int(a) for a in predator_actions],
            "prey_actions": [int(a) for a in prey_actions],
            "reward": float(reward),
            "done": bool(done),
        }
        self.logger.info(json.dumps(row))

    def close(self):
        for handler in list(self.logger.handlers):
            self.logger.removeHandler(handler)
            handler.close()


def audit_command(action):
    """Log a CLI command as a pending event, then success or error."""
    def decorator(f):
        @wraps(f)
        def decorated_function(args, *rest, **kwargs):
            details = {k: v for k, v in sorted(vars(args).items()) if k != "handler"}
            log_event(f"{action} - Started", details, "pending")
            try:
                status = f(args, *rest, **kwargs)
            except Exception as e:
                log_event(action, {"error": str(e)}, "error")
                raise
            log_event(action, {"exit_code": status}, "success" if not status else "failed")
            return status

        return decorated_function
    return decorator
