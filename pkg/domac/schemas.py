from marshmallow import RAISE, Schema, ValidationError, fields, post_load, validate, validates_schema

VARIANTS = ['DOMAC', 'MAAC', 'OMAC', 'DMAC', 'UB']


class HiddenDims(fields.Field):
    """Comma-separated layer widths, e.g. ``64,64,64``."""

    def _serialize(self, value, attr, obj, **kwargs):
        if value is None:
            return None
        return ",".join(str(int(v)) for v in value)

    def _deserialize(self, value, attr, data, **kwargs):
        if isinstance(value, (list, tuple)):
            parts = list(value)
        else:
            parts = [p.strip() for p in str(value).split(",") if p.strip()]
        try:
            dims = tuple(int(p) for p in parts)
        except (TypeError, ValueError):
            raise ValidationError("must be a comma-separated list of integers")
        if not dims or any(d < 1 for d in dims):
            raise ValidationError("must list at least one positive width")
        return dims


class EnvSchema(Schema):
    class Meta:
        unknown = RAISE

    preset = fields.Str(load_default='pp2v1', validate=validate.OneOf(['pp2v1', 'pp4v2']))
    grid_size = fields.Int(load_default=None, allow_none=True, validate=validate.Range(min=2))
    n_predators = fields.Int(load_default=None, allow_none=True, validate=validate.Range(min=1))
    n_preys = fields.Int(load_default=None, allow_none=True, validate=validate.Range(min=1))
    view_size = fields.Int(load_default=5, validate=validate.Range(min=1))
    max_steps = fields.Int(load_default=100, validate=validate.Range(min=1))
    prey_policy = fields.Str(load_default='uniform', validate=validate.OneOf(['uniform', 'alternate']))

    @validates_schema
    def validate_view(self, data, **kwargs):
        if data.get('view_size', 5) % 2 == 0:
            raise ValidationError("must be odd", field_name='view_size')


class AlgoSchema(Schema):
    class Meta:
        unknown = RAISE

    gamma = fields.Float(load_default=0.95, validate=validate.Range(min=0.0, max=1.0, max_inclusive=False))
    alpha = fields.Float(load_default=0.01, validate=validate.Range(min=0.0))
    quantiles = fields.Int(load_default=5, validate=validate.Range(min=1, max=64))
    kappa = fields.Float(load_default=1.0, validate=validate.Range(min=0.0, min_inclusive=False))
    quantile_levels = fields.Str(load_default='midpoint', validate=validate.OneOf(['midpoint', 'uniform']))
    sample_size = fields.Int(load_default=None, allow_none=True, validate=validate.Range(min=1))
    enumeration_cap = fields.Int(load_default=10000, validate=validate.Range(min=1))
    hidden_dims = HiddenDims(load_default=(64, 64, 64))
    hidden_activation = fields.Str(load_default='tanh', validate=validate.OneOf(['tanh', 'relu']))


class OptimSchema(Schema):
    class Meta:
        unknown = RAISE

    lr_actor = fields.Float(load_default=2.5e-4, validate=validate.Range(min=0.0, min_inclusive=False))
    lr_critic = fields.Float(load_default=1e-4, validate=validate.Range(min=0.0, min_inclusive=False))
    beta1 = fields.Float(load_default=0.9, validate=validate.Range(min=0.0, max=1.0, max_inclusive=False))
    beta2 = fields.Float(load_default=0.999, validate=validate.Range(min=0.0, max=1.0, max_inclusive=False))
    eps = fields.Float(load_default=1e-8, validate=validate.Range(min=0.0, min_inclusive=False))


class RolloutSchema(Schema):
    class Meta:
        unknown = RAISE

    update_mode = fields.Str(load_default='episodes', validate=validate.OneOf(['episodes', 'steps']))
    episodes_per_update = fields.Int(load_default=10, validate=validate.Range(min=1))
    forward_steps = fields.Int(load_default=5, validate=validate.Range(min=1))
    n_envs = fields.Int(load_default=1, validate=validate.Range(min=1, max=256))
    workers = fields.Int(load_default=1, validate=validate.Range(min=1, max=64))


class EvalSchema(Schema):
    class Meta:
        unknown = RAISE

    every = fields.Int(load_default=100, validate=validate.Range(min=1))
    episodes = fields.Int(load_default=100, validate=validate.Range(min=1))
    checkpoint_every = fields.Int(load_default=100, validate=validate.Range(min=1))
    record_wall_time = fields.Bool(load_default=False)
    dump_trajectories = fields.Bool(load_default=False)


class AblationSchema(Schema):
    class Meta:
        unknown = RAISE

    mask_obs = fields.Bool(load_default=False)
    om_dim = fields.Int(load_default=5, validate=validate.Range(min=2, max=64))
    om_frozen = fields.Str(load_default='trained', validate=validate.OneOf(['trained', 'random']))


SECTIONS = {
    'env': EnvSchema,
    'algo': AlgoSchema,
    'optim': OptimSchema,
    'rollout': RolloutSchema,
    'eval': EvalSchema,
    'ablation': AblationSchema,
}


class TrainConfigSchema(Schema):
    class Meta:
        unknown = RAISE

    variant = fields.Str(load_default='DOMAC', validate=validate.OneOf(VARIANTS))
    seed = fields.Int(load_default=0, validate=validate.Range(min=0))
    episodes = fields.Int(load_default=15000, validate=validate.Range(min=1))
    env = fields.Nested(EnvSchema, load_default=dict)
    algo = fields.Nested(AlgoSchema, load_default=dict)
    optim = fields.Nested(OptimSchema, load_default=dict)
    rollout = fields.Nested(RolloutSchema, load_default=dict)
    eval = fields.Nested(EvalSchema, load_default=dict)
    ablation = fields.Nested(AblationSchema, load_default=dict)

    @validates_schema
    def validate_variant_flags(self, data, **kwargs):
        if data.get('variant') == 'UB' and data.get('ablation', {}).get('om_dim', 5) != 5:
            raise ValidationError("UB feeds true opponent actions and needs om_dim = 5",
                                  field_name='ablation.om_dim')

    @post_load
    def make_config(self, data, **kwargs):
        from domac.config import TrainConfig
        return TrainConfig.from_dict(data)
