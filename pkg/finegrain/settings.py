"""
Django settings for the finegrain project.

The project has no web surface: Django provides configuration, the management
command runner and the test runner. Pipeline defaults live in ``FINEGRAIN``;
a run's JSON config file overrides them section by section.

For more information on this file, see
https://docs.djangoproject.com/en/5.0/topics/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used by Django internals; nothing here is signed or served.
SECRET_KEY = os.environ.get('FINEGRAIN_SECRET_KEY', 'finegrain-insecure-local-only')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'adaptation',
    'rest_framework',
]

# No database: every test is a SimpleTestCase and no model is stored.
DATABASES = {}


# Logging
# https://docs.djangoproject.com/en/5.0/topics/logging/

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'stage': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'stage',
        },
    },
    'loggers': {
        'adaptation': {
            'handlers': ['console'],
            'level': os.environ.get('FINEGRAIN_LOG_LEVEL', 'INFO'),
            'propagate': False,
        },
    },
}


# Pipeline defaults, overridden per section by a run's JSON config file.

FINEGRAIN = {
    'seed': 0,
    'preprocess': {
        'spacing': [0.4102, 0.4102, 0.4102],
        'crop': [256, 256, 256],
        'crop_origin': None,  # None -> centred crop
        'p_low': 0.0,
        'p_high': 99.5,
    },
    'registration': {
        'levels': [4, 2, 1],
        'bins': 32,
        'max_rotation_deg': 15.0,
        'max_log_scale': 0.2,
        'max_translation_mm': 20.0,
        'max_iter': 20,
        'xtol': 1e-3,
        'ftol': 1e-6,
    },
    'generator': {
        'channels': [64, 128, 256, 256],
        'n_residual_blocks': 6,
    },
    'discriminator': {
        'channels': [64, 128, 256, 512],
    },
    'train_gan': {
        'learning_rate': 2e-4,
        'betas': [0.5, 0.999],
        'epochs': 1000,
        'batch_size': 1,
        'lambda_adv': 1.0,
        'lambda_rec': 10.0,
        'lambda_cyc': 0.0,
        'max_steps': None,
        'checkpoint_every': 10,
        'flip_probability': 0.0,
    },
    'segmentation': {
        'base_channels': 8,
        'patch_size': [32, 32, 32],
        'foreground_ratio': 2 / 3,
        'patches_per_volume': 2,
        'batch_size': 2,
        'epochs': 50,
        'learning_rate': 1e-3,
        'validation_fraction': 0.1,
    },
}


# Internationalization
# https://docs.djangoproject.com/en/5.0/topics/i18n/

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True
