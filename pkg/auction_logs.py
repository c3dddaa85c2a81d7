# auction_logs.py
import json
import logging
import os
from typing import Sequence

import numpy as np
import pandas as pd

from exceptions import DataError

logger = logging.getLogger(__name__)

AUCTION_LOG_COLUMNS = ['t', 'advertiser_id', 'bid', 'impressions', 'clicks', 'avg_cpc']
USER_LOG_COLUMNS = ['t', 'user_count']
AUCTION_LOG_FILE = 'auction_log.jsonl'
USER_LOG_FILE = 'user_log.jsonl'

_INTEGER_COLUMNS = ('t', 'advertiser_id', 'impressions', 'clicks', 'user_count')


def _to_native(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


def write_jsonl(df: pd.DataFrame, path: str):
    """One JSON object per line; floats are written with full repr precision"""
    with open(path, 'w') as f:
        for record in df.to_dict('records'):
            f.write(json.dumps(record, default=_to_native) + '\n')


def read_jsonl(path: str, columns: Sequence[str]) -> pd.DataFrame:
    records = []
    with open(path, 'r') as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{line_no}: malformed record ({e})") from e
    df = pd.DataFrame(records, columns=list(columns) if not records else None)
    missing = set(columns) - set(df.columns)
    if missing:
        raise DataError(f"{path}: records are missing {sorted(missing)}")
    df = df[list(columns)]
    for column in columns:
        if column in _INTEGER_COLUMNS:
            df[column] = df[column].astype(np.int64)
        else:
            df[column] = df[column].astype(float)
    return df


def validate_auction_log(log_df: pd.DataFrame):
    """One record per (t, advertiser); periods contiguous from 1"""
    if log_df.empty:
        raise DataError("auction log is empty")
    if log_df.duplicated(['t', 'advertiser_id']).any():
        raise DataError("auction log has more than one record for some (t, advertiser)")
    periods = np.sort(log_df['t'].unique())
    if periods[0] != 1 or np.any(np.diff(periods) != 1):
        raise DataError("auction log periods must be contiguous from 1")
    advertisers = log_df['advertiser_id'].nunique()
    if len(log_df) != advertisers * len(periods):
        raise DataError("auction log is missing records for some (t, advertiser)")


class AuctionLogStore:
    def __init__(self, data_dir: str):
        """Directory holding the auction log and the user log"""
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)

    @property
    def auction_log_path(self) -> str:
        return os.path.join(self.data_dir, AUCTION_LOG_FILE)

    @property
    def user_log_path(self) -> str:
        return os.path.join(self.data_dir, USER_LOG_FILE)

    def exists(self) -> bool:
        return os.path.exists(self.auction_log_path) and os.path.exists(self.user_log_path)

    def write_auction_log(self, log_df: pd.DataFrame):
        validate_auction_log(log_df)
        try:
            write_jsonl(log_df[AUCTION_LOG_COLUMNS].sort_values(['t', 'advertiser_id']),
                        self.auction_log_path)
            logger.info(f"Wrote {len(log_df)} auction records to {self.auction_log_path}")
        except OSError as e:
            logger.error(f"Error writing auction log: {e}")
            raise

    def write_user_log(self, user_counts: Sequence[int]):
        df = pd.DataFrame({'t': np.arange(1, len(user_counts) + 1),
                           'user_count': np.asarray(user_counts, dtype=np.int64)})
        try:
            write_jsonl(df, self.user_log_path)
            logger.info(f"Wrote {len(df)} user stream records to {self.user_log_path}")
        except OSError as e:
            logger.error(f"Error writing user log: {e}")
            raise

    def read_auction_log(self) -> pd.DataFrame:
        try:
            log_df = read_jsonl(self.auction_log_path, AUCTION_LOG_COLUMNS)
        except FileNotFoundError as e:
            raise DataError(f"auction log not found: {self.auction_log_path}") from e
        validate_auction_log(log_df)
        logger.info(f"Loaded {len(log_df)} auction records from {self.auction_log_path}")
        return log_df

    def read_user_log(self) -> pd.DataFrame:
        try:
            user_df = read_jsonl(self.user_log_path, USER_LOG_COLUMNS)
        except FileNotFoundError as e:
            raise DataError(f"user log not found: {self.user_log_path}") from e
        if (user_df['user_count'] < 0).any():
            raise DataError("user log has negative user counts")
        return user_df

    def user_pool(self, periods: int) -> tuple:
        """User counts of the first `periods` periods, the resampling pool for simulation"""
        user_df = self.read_user_log()
        pool = user_df.loc[user_df['t'] <= periods, 'user_count']
        if pool.empty:
            raise DataError(f"no user streams logged within the first {periods} periods")
        return tuple(int(u) for u in pool)
