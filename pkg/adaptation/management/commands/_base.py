import json
import logging

from django.core.management.base import BaseCommand, CommandError
from rest_framework.exceptions import ValidationError

logger = logging.getLogger('adaptation.commands')

VALIDATION_EXIT_CODE = 2
RUNTIME_EXIT_CODE = 1


def one_line(exc):
    '''
    Flatten an exception (including nested DRF error details) to one line.
    '''
    if isinstance(exc, ValidationError):
        detail = exc.detail
        text = detail if isinstance(detail, str) else json.dumps(detail)
    else:
        text = str(exc) or type(exc).__name__
    return ' '.join(str(text).split())


class PipelineCommand(BaseCommand):
    '''
    A pipeline stage: ``validate`` checks flags, config and inputs and returns
    a plan; ``run`` does the work. Validation problems exit with 2, failures
    during the work with 1.
    '''
    requires_system_checks = []
    requires_migrations_checks = False

    def add_config_arguments(self, parser):
        parser.add_argument('--config', help='JSON config file overriding the defaults.')
        parser.add_argument('--seed', type=int, help='Seed for every random draw of the run.')

    def handle(self, *args, **options):
        if options.get('verbosity', 1) >= 2:
            logging.getLogger('adaptation').setLevel(logging.DEBUG)
        try:
            plan = self.validate(**options)
        except (ValidationError, ValueError, FileNotFoundError) as exc:
            raise CommandError(f'invalid input: {one_line(exc)}', returncode=VALIDATION_EXIT_CODE) from exc
        try:
            self.run(plan)
        except CommandError:
            raise
        except Exception as exc:
            logger.debug('stage failed', exc_info=True)
            raise CommandError(f'failed: {one_line(exc)}', returncode=RUNTIME_EXIT_CODE) from exc

    def validate(self, **options):
        raise NotImplementedError

    def run(self, plan):
        raise NotImplementedError
