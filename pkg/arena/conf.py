from django.conf import settings
from appconf import AppConf


class ArenaConf(AppConf):
    ROUNDS = 10
    TEMPLATE = "base-v1"

    # player-major: PAYOFFS[player][row][col], action 0 is "F", action 1 is "J"
    PD_PAYOFFS = [
        [[5, 10], [0, 8]],
        [[5, 0], [10, 8]],
    ]
    BOS_PAYOFFS = [
        [[10, 0], [0, 7]],
        [[7, 0], [0, 10]],
    ]

    PARSE_RETRIES = 3
    HTTP_RETRIES = 5
    HTTP_BACKOFF = 1.0
    HTTP_BACKOFF_CAP = 30.0
    HTTP_TIMEOUT = 30.0
    RATE_LIMIT = 0
    ENDPOINT = "https://api.openai.com/v1/chat/completions"

    MAX_WORKERS = 8
    OFFLINE = False
    CACHE_ALIAS = "completions"
    API_KEY = ""
    RUN_DIR = "runs"
    GOLDENS_DIR = "goldens"

    CENSUS_TARGET = {
        "WinWin": 36,
        "PrisonersDilemma": 7,
        "Unfair": 19,
        "Cyclic": 18,
        "Biased": 44,
        "SecondBest": 12,
        "Other": 8,
    }
    CI_Z = 1.96

    class Meta:
        prefix = 'arena'
