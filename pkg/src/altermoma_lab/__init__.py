from altermoma_lab.utils.internal import init_config_and_logger

config, log = init_config_and_logger()
