"""Single entry point bundling the pipeline commands.

    lqst gen-data --out data/processed/lqst.bin
    lqst svt --out reports/svt.csv
    lqst train --data data/processed/lqst.bin --layers 3 --out models/lqst.ckpt
    lqst eval --ckpt models/lqst.ckpt --data data/processed/lqst.bin
    lqst report --svt reports/svt.csv --eval reports/eval.json
"""

from functools import wraps

from loguru import logger
import typer

from qst_model import dataset, report, svt
from qst_model.errors import QstError
from qst_model.modeling import predict, train

app = typer.Typer(no_args_is_help=True)


def guarded(command):
    """Report a ``QstError`` as one log line and exit with status 1."""

    @wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except QstError as e:
            logger.error(f"{type(e).__name__}: {e}")
            raise typer.Exit(code=1) from e

    return wrapper


cmd_gen_data = app.command("gen-data", help="Generate a synthetic tomography dataset.")(
    guarded(dataset.main)
)
cmd_svt = app.command("svt", help="Sweep SVT over rank, tau and delta.")(guarded(svt.main))
cmd_train = app.command("train", help="Train an unrolled LQST network.")(guarded(train.main))
cmd_eval = app.command("eval", help="Evaluate networks on a dataset or the Bell state.")(
    guarded(predict.main)
)
cmd_report = app.command("report", help="Merge SVT and LQST results into one table.")(
    guarded(report.main)
)


if __name__ == "__main__":
    app()
