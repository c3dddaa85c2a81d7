# main.py
import argparse
import logging
import os
import sys
from typing import List, Optional

from advertiser_behavior import save_model
from auction_logs import AuctionLogStore
from config import ExperimentConfig, load_config
from exceptions import AuctionLearningError, DataError
from pipeline import (BEHAVIOR_MODEL_FILE, COMPARISON_FIGURE_FILE, evaluate_mechanisms, learn_behavior_model,
                      load_boa_alpha, plot_revenue_comparison, run_boa, select_baselines, write_evaluation)
from synthetic_data import gen_synthetic

logger = logging.getLogger(__name__)

COMMANDS = ('gen', 'learn', 'optimize', 'evaluate', 'compare')


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description='Learn a revenue-maximising GSP quality-score exponent '
                                                 'from advertiser auction logs.')
    parser.add_argument('command', choices=COMMANDS)
    parser.add_argument('--config', default=None, help='experiment config JSON')
    parser.add_argument('--seed', type=int, default=None, help='master seed')
    parser.add_argument('--out', default=None, help='output directory')
    parser.add_argument('--delta', type=float, default=None, help='δ-cache radius')
    parser.add_argument('--horizon', type=int, default=None, help='simulated periods per revenue estimate')
    parser.add_argument('--verbose', action='store_true')
    return parser.parse_args(argv)


def command_gen(config: ExperimentConfig):
    scenario = config.load_scenario()
    gen_synthetic(scenario, config.train_periods, config.seeds['gen'], AuctionLogStore(config.data_dir))


def command_learn(config: ExperimentConfig):
    scenario = config.load_scenario()
    log_df = AuctionLogStore(config.data_dir).read_auction_log()
    model = learn_behavior_model(config, log_df, scenario)
    os.makedirs(config.output_dir, exist_ok=True)
    save_model(model, config.path(BEHAVIOR_MODEL_FILE))


def command_optimize(config: ExperimentConfig):
    run_boa(config)


def command_evaluate(config: ExperimentConfig, boa_alpha: Optional[float] = None):
    scenario = config.load_scenario()
    store = AuctionLogStore(config.data_dir)
    if not store.exists():
        raise DataError(f"no auction and user logs in {config.data_dir}; run gen first")
    if boa_alpha is None:
        boa_alpha = load_boa_alpha(config)
    alphas = {'BOA': boa_alpha,
              **select_baselines(config, scenario, store.read_auction_log(), store.read_user_log())}
    result = evaluate_mechanisms(config, alphas, scenario)
    write_evaluation(result, config.output_dir)
    return result


def command_compare(config: ExperimentConfig):
    command_gen(config)
    boa = run_boa(config)
    result = command_evaluate(config, boa.alpha)
    plot_revenue_comparison(result.cumulative, config.path(COMPARISON_FIGURE_FILE), result.alphas)
    for row in result.summary.itertuples():
        logger.info(f"{row.reference} vs {row.other}: {row.wins} wins, {row.losses} losses, "
                    f"p={row.p_value:.4f}")


HANDLERS = {
    'gen': command_gen,
    'learn': command_learn,
    'optimize': command_optimize,
    'evaluate': command_evaluate,
    'compare': command_compare,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        config = load_config(args.config, {'seed': args.seed, 'output_dir': args.out,
                                           'delta': args.delta, 'horizon': args.horizon})
        HANDLERS[args.command](config)
    except AuctionLearningError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    except OSError as e:
        logger.error(f"{args.command} failed on I/O: {e}")
        return DataError.exit_code
    logger.info(f"{args.command} completed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
