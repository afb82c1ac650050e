import math

from rest_framework import serializers

from .conditioning import Center, Modality, parse_code
from .discriminator import DiscriminatorConfig
from .gan_training import TrainConfig
from .generator import GeneratorConfig
from .pipeline import PreprocessConfig
from .registration import RegistrationConfig
from .segmentation import SegConfig


class TripleField(serializers.Field):
    '''
    Three numbers, given either as a list or as one number repeated per axis.
    '''
    default_error_messages = {
        'invalid': 'Expected a number or a list of 3 numbers.',
        'positive': 'All components must be strictly positive.',
    }

    def __init__(self, *, kind=float, positive=True, **kwargs):
        self.kind = kind
        self.positive = positive
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        scalar = isinstance(data, (int, float)) and not isinstance(data, bool)
        raw = [data] * 3 if scalar else data
        if not isinstance(raw, (list, tuple)) or len(raw) != 3:
            self.fail('invalid')
        values = []
        for item in raw:
            if isinstance(item, bool) or not isinstance(item, (int, float)) or not math.isfinite(item):
                self.fail('invalid')
            if self.kind is int and not float(item).is_integer():
                self.fail('invalid')
            values.append(self.kind(item))
        if self.positive and any(v <= 0 for v in values):
            self.fail('positive')
        return tuple(values)

    def to_representation(self, value):
        return list(value)


class CodeStringField(serializers.CharField):
    def to_internal_value(self, data):
        text = super().to_internal_value(data)
        try:
            return parse_code(text)
        except ValueError as exc:
            raise serializers.ValidationError(str(exc))

    def to_representation(self, value):
        return value.to_string()


class SourceEntrySerializer(serializers.Serializer):
    volume_path = serializers.CharField()
    mask_path = serializers.CharField(required=False, allow_null=True)
    modality = serializers.ChoiceField(choices=Modality.choices)
    center = serializers.ChoiceField(choices=Center.choices)


class AugmentedEntrySerializer(serializers.Serializer):
    image_path = serializers.CharField()
    mask_path = serializers.CharField()
    code_string = CodeStringField()


class PreprocessConfigSerializer(serializers.Serializer):
    spacing = TripleField()
    crop = TripleField(kind=int)
    crop_origin = TripleField(kind=int, positive=False, allow_null=True, required=False)
    p_low = serializers.FloatField(min_value=0.0, max_value=100.0)
    p_high = serializers.FloatField(min_value=0.0, max_value=100.0)

    def validate(self, data):
        if data['p_low'] >= data['p_high']:
            raise serializers.ValidationError({'p_high': 'Must be greater than p_low.'})
        return data

    def create(self, validated_data):
        return PreprocessConfig(**validated_data)


class RegistrationConfigSerializer(serializers.Serializer):
    levels = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=1)
    bins = serializers.IntegerField(min_value=2)
    max_rotation_deg = serializers.FloatField(min_value=0.0)
    max_log_scale = serializers.FloatField(min_value=0.0)
    max_translation_mm = serializers.FloatField(min_value=0.0)
    max_iter = serializers.IntegerField(min_value=1)
    xtol = serializers.FloatField(min_value=0.0)
    ftol = serializers.FloatField(min_value=0.0)

    def validate_levels(self, value):
        # Coarse to fine, ending at full resolution
        if value != sorted(value, reverse=True) or value[-1] != 1:
            raise serializers.ValidationError('Levels must be decreasing downsampling factors ending with 1.')
        return tuple(value)

    def create(self, validated_data):
        return RegistrationConfig(**validated_data)


class GeneratorConfigSerializer(serializers.Serializer):
    channels = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=4, max_length=4)
    n_residual_blocks = serializers.IntegerField(min_value=0)

    def validate_channels(self, value):
        if value[2] != value[3]:
            raise serializers.ValidationError('The residual width (4th entry) must equal the 3rd entry.')
        return tuple(value)

    def create(self, validated_data):
        return GeneratorConfig(**validated_data)


class DiscriminatorConfigSerializer(serializers.Serializer):
    channels = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=4, max_length=4)

    def create(self, validated_data):
        return DiscriminatorConfig(channels=tuple(validated_data['channels']))


class TrainConfigSerializer(serializers.Serializer):
    learning_rate = serializers.FloatField()
    betas = serializers.ListField(child=serializers.FloatField(min_value=0.0), min_length=2, max_length=2)
    epochs = serializers.IntegerField(min_value=1)
    batch_size = serializers.IntegerField(min_value=1)
    lambda_adv = serializers.FloatField(min_value=0.0)
    lambda_rec = serializers.FloatField(min_value=0.0)
    lambda_cyc = serializers.FloatField(min_value=0.0, required=False)
    max_steps = serializers.IntegerField(min_value=1, allow_null=True, required=False)
    checkpoint_every = serializers.IntegerField(min_value=1)
    flip_probability = serializers.FloatField(min_value=0.0, max_value=1.0)
    seed = serializers.IntegerField(min_value=0)

    def validate_learning_rate(self, value):
        if not value > 0:
            raise serializers.ValidationError('Learning rate must be positive.')
        return value

    def validate_betas(self, value):
        if any(beta >= 1 for beta in value):
            raise serializers.ValidationError('Betas must be below 1.')
        return tuple(value)

    def create(self, validated_data):
        return TrainConfig(**validated_data)


class SegConfigSerializer(serializers.Serializer):
    base_channels = serializers.IntegerField(min_value=1)
    patch_size = TripleField(kind=int)
    foreground_ratio = serializers.FloatField(min_value=0.0, max_value=1.0)
    patches_per_volume = serializers.IntegerField(min_value=1)
    batch_size = serializers.IntegerField(min_value=1)
    epochs = serializers.IntegerField(min_value=1)
    learning_rate = serializers.FloatField()
    validation_fraction = serializers.FloatField(min_value=0.0, max_value=0.5)
    seed = serializers.IntegerField(min_value=0)

    def validate_patch_size(self, value):
        # Two pooling levels in the segmenter
        if any(extent % 4 for extent in value):
            raise serializers.ValidationError('Patch extents must be divisible by 4.')
        return value

    def validate_learning_rate(self, value):
        if not value > 0:
            raise serializers.ValidationError('Learning rate must be positive.')
        return value

    def create(self, validated_data):
        return SegConfig(**validated_data)
