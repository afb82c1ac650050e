import json
import tempfile
from pathlib import Path

from django.test import SimpleTestCase, override_settings
from rest_framework.exceptions import ValidationError

from adaptation.config import EFFECTIVE_CONFIG_FILE, build, effective_config, write_effective_config
from adaptation.generator import GeneratorConfig
from adaptation.pipeline import PreprocessConfig
from adaptation.registration import RegistrationConfig
from adaptation.serializers import (
    AugmentedEntrySerializer,
    GeneratorConfigSerializer,
    PreprocessConfigSerializer,
    RegistrationConfigSerializer,
    SegConfigSerializer,
    TrainConfigSerializer,
)


class TestUtils:
        '''
        Utility class to collect repetitive setup tasks.
        '''
        @staticmethod
        def preprocess_data(**overrides):
            data = {'spacing': 1.0, 'crop': [32, 32, 32], 'crop_origin': None, 'p_low': 0.0, 'p_high': 99.5}
            data.update(overrides)
            return data

        @staticmethod
        def train_data(**overrides):
            data = {
                'learning_rate': 2e-4, 'betas': [0.5, 0.999], 'epochs': 1, 'batch_size': 1, 'lambda_adv': 1.0,
                'lambda_rec': 10.0, 'lambda_cyc': 0.0, 'max_steps': None, 'checkpoint_every': 1, 'flip_probability': 0.0, 'seed': 0,
            }
            data.update(overrides)
            return data

        @staticmethod
        def write_json(directory, payload):
            path = Path(directory) / 'config.json'
            path.write_text(json.dumps(payload))
            return path


class SerializerTests(SimpleTestCase):

    def test_triple_scalar_or_list(self):
        '''
        Test that one number stands for all three axes.
        '''
        serializer = PreprocessConfigSerializer(data=TestUtils.preprocess_data(spacing=0.5))
        self.assertTrue(serializer.is_valid(), serializer.errors)
        config = serializer.save()
        self.assertIsInstance(config, PreprocessConfig)
        self.assertEqual(config.spacing, (0.5, 0.5, 0.5))
        self.assertEqual(config.crop, (32, 32, 32))

    def test_triple_rejects_nonpositive_and_bad_length(self):
        '''
        Test that zero spacing and two-element lists are refused.
        '''
        serializer = PreprocessConfigSerializer(data=TestUtils.preprocess_data(spacing=0))
        self.assertFalse(serializer.is_valid())
        self.assertEqual(serializer.errors['spacing'][0].code, 'positive')
        serializer = PreprocessConfigSerializer(data=TestUtils.preprocess_data(crop=[32, 32]))
        self.assertFalse(serializer.is_valid())
        self.assertIn('crop', serializer.errors)

    def test_crop_must_be_integral(self):
        '''
        Test that fractional crop extents are refused.
        '''
        serializer = PreprocessConfigSerializer(data=TestUtils.preprocess_data(crop=[32.5, 32, 32]))
        self.assertFalse(serializer.is_valid())

    def test_percentiles_ordered(self):
        '''
        Test that p_low must stay below p_high.
        '''
        serializer = PreprocessConfigSerializer(data=TestUtils.preprocess_data(p_low=50.0, p_high=50.0))
        self.assertFalse(serializer.is_valid())
        self.assertIn('p_high', serializer.errors)

    def test_registration_levels(self):
        '''
        Test that levels must decrease and end at full resolution.
        '''
        base = {
            'bins': 32, 'max_rotation_deg': 15.0, 'max_log_scale': 0.2, 'max_translation_mm': 20.0,
            'max_iter': 20, 'xtol': 1e-3, 'ftol': 1e-6,
        }
        for levels in ([1, 2], [4, 2]):
            self.assertFalse(RegistrationConfigSerializer(data={**base, 'levels': levels}).is_valid())
        serializer = RegistrationConfigSerializer(data={**base, 'levels': [2, 1]})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.save(), RegistrationConfig(levels=(2, 1)))

    def test_generator_residual_width(self):
        '''
        Test that the residual width must match the encoder output width.
        '''
        self.assertFalse(GeneratorConfigSerializer(data={'channels': [8, 16, 32, 64], 'n_residual_blocks': 1}).is_valid())
        serializer = GeneratorConfigSerializer(data={'channels': [8, 16, 32, 32], 'n_residual_blocks': 1})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertIsInstance(serializer.save(), GeneratorConfig)

    def test_train_hyperparameters(self):
        '''
        Test that a zero learning rate and a beta of 1 are refused.
        '''
        self.assertTrue(TrainConfigSerializer(data=TestUtils.train_data()).is_valid())
        self.assertFalse(TrainConfigSerializer(data=TestUtils.train_data(learning_rate=0.0)).is_valid())
        self.assertFalse(TrainConfigSerializer(data=TestUtils.train_data(betas=[0.5, 1.0])).is_valid())
        self.assertFalse(TrainConfigSerializer(data=TestUtils.train_data(lambda_cyc=-1.0)).is_valid())

    def test_segmentation_patch(self):
        '''
        Test that patch extents must be divisible by 4 and the held-out share capped at one half.
        '''
        data = {
            'base_channels': 4, 'patch_size': 16, 'foreground_ratio': 0.5, 'patches_per_volume': 1,
            'batch_size': 1, 'epochs': 1, 'learning_rate': 1e-3, 'validation_fraction': 0.1, 'seed': 0,
        }
        self.assertTrue(SegConfigSerializer(data=data).is_valid())
        self.assertFalse(SegConfigSerializer(data={**data, 'patch_size': 18}).is_valid())
        self.assertFalse(SegConfigSerializer(data={**data, 'validation_fraction': 0.6}).is_valid())

    def test_code_string_field(self):
        '''
        Test that manifest rows carry a parsed code and reject malformed ones.
        '''
        row = {'image_path': 'a.fgv', 'mask_path': 'b.fgv', 'code_string': 't2:etz:cor:-'}
        serializer = AugmentedEntrySerializer(data=row)
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.validated_data['code_string'].to_string(), 't2:etz:cor:-')
        self.assertFalse(AugmentedEntrySerializer(data={**row, 'code_string': 't2:xyz:cor:-'}).is_valid())


class EffectiveConfigTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def test_defaults(self):
        '''
        Test that without a file every section builds from the defaults.
        '''
        merged = effective_config()
        self.assertEqual(merged['seed'], 0)
        self.assertEqual(build('preprocess', merged).crop, (256, 256, 256))
        self.assertEqual(build('generator', merged).channels, (64, 128, 256, 256))
        self.assertEqual(build('train_gan', merged).seed, 0)

    def test_file_overrides_section_fields(self):
        '''
        Test that a file overrides single fields and keeps the rest of the section.
        '''
        path = TestUtils.write_json(self.tmp.name, {'segmentation': {'epochs': 3}})
        merged = effective_config(path)
        config = build('segmentation', merged)
        self.assertEqual(config.epochs, 3)
        self.assertEqual(config.patch_size, (32, 32, 32))

    def test_seed_precedence(self):
        '''
        Test flag seed over file seed over default, injected into the seeded sections.
        '''
        path = TestUtils.write_json(self.tmp.name, {'seed': 5})
        self.assertEqual(effective_config(path)['seed'], 5)
        merged = effective_config(path, seed=7)
        self.assertEqual(merged['seed'], 7)
        self.assertEqual(merged['train_gan']['seed'], 7)
        self.assertEqual(merged['segmentation']['seed'], 7)

    def test_unknown_section_and_key(self):
        '''
        Test that misspelt sections and fields are refused.
        '''
        with self.assertRaisesMessage(ValidationError, 'unknown config sections: segmentaton'):
            effective_config(TestUtils.write_json(self.tmp.name, {'segmentaton': {}}))
        with self.assertRaisesMessage(ValidationError, 'unknown keys in train_gan: lr'):
            effective_config(TestUtils.write_json(self.tmp.name, {'train_gan': {'lr': 1e-3}}))

    def test_seed_in_section_is_refused(self):
        '''
        Test that the seed is only set at top level.
        '''
        with self.assertRaises(ValidationError):
            effective_config(TestUtils.write_json(self.tmp.name, {'train_gan': {'seed': 3}}))

    def test_negative_seed(self):
        '''
        Test that negative and non-integer seeds are refused.
        '''
        with self.assertRaises(ValidationError):
            effective_config(seed=-1)
        with self.assertRaises(ValidationError):
            effective_config(TestUtils.write_json(self.tmp.name, {'seed': 'abc'}))

    def test_missing_and_malformed_file(self):
        '''
        Test a missing file and a file that is not a JSON object.
        '''
        with self.assertRaises(FileNotFoundError):
            effective_config(Path(self.tmp.name) / 'absent.json')
        path = Path(self.tmp.name) / 'broken.json'
        path.write_text('[1, 2')
        with self.assertRaises(ValidationError):
            effective_config(path)
        path.write_text('[1, 2]')
        with self.assertRaises(ValidationError):
            effective_config(path)

    def test_build_names_the_section(self):
        '''
        Test that build errors are keyed by their section.
        '''
        merged = effective_config(overrides={'preprocess': {'spacing': [1, 1, -1]}})
        with self.assertRaises(ValidationError) as caught:
            build('preprocess', merged)
        self.assertIn('preprocess', caught.exception.detail)

    @override_settings(FINEGRAIN={
        'seed': 1, 'preprocess': {}, 'registration': {}, 'generator': {},
        'discriminator': {}, 'train_gan': {}, 'segmentation': {},
    })
    def test_defaults_come_from_settings(self):
        '''
        Test that the defaults are read from the project settings.
        '''
        self.assertEqual(effective_config()['seed'], 1)

    def test_defaults_are_not_mutated(self):
        '''
        Test that merging leaves the settings untouched between runs.
        '''
        effective_config(overrides={'segmentation': {'epochs': 2}})
        self.assertEqual(effective_config()['segmentation']['epochs'], 50)

    def test_write_effective_config(self):
        '''
        Test that the merged config is written as sorted JSON and reads back equal.
        '''
        merged = effective_config(seed=4)
        path = write_effective_config(merged, Path(self.tmp.name) / 'run')
        self.assertEqual(path.name, EFFECTIVE_CONFIG_FILE)
        self.assertEqual(json.loads(path.read_text()), json.loads(json.dumps(merged)))

    def test_benchmark_config_builds(self):
        '''
        Test that the shipped phantom benchmark config validates in every section.
        '''
        path = Path(__file__).resolve().parents[2] / 'configs' / 'phantom_benchmark.json'
        merged = effective_config(path)
        self.assertEqual(build('train_gan', merged).lambda_cyc, 10.0)
        self.assertEqual(build('segmentation', merged).patch_size, (48, 48, 48))
        self.assertEqual(build('generator', merged).channels, (16, 32, 64, 64))
        build('discriminator', merged)
