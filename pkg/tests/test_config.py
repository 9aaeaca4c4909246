import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexencoder.config import (
    CONFIG_KEYS,
    ModelConfig,
    parse_config,
    parse_config_text,
    serialize_config,
)
from flexencoder.errors import ConfigError
from flexencoder.nn import Activation
from flexencoder.optim import OptimizerKind


def test_empty_file_gives_documented_defaults():
    c = parse_config_text("")
    assert c == ModelConfig()
    assert c.lr == 0.001 and c.weight_decay == 0.001
    assert c.hidden_layers == (512, 256)
    assert c.drop_prob == 0.3 and c.noise_prob == 0.2
    assert c.train_batch_size == 128 and c.epochs == 20
    assert c.optimizer is OptimizerKind.ADAM and c.activation is Activation.RELU
    assert c.dense_refeed == 1 and c.dense_refeed_rounding
    assert not c.decoder_constraint and c.mean_normalization and not c.prediction_rounding
    assert c.pivot == "user" and c.pivot_index == (0, 1)
    assert c.test_mask_rate == 0.5 and c.test_split_rate == 0.3
    assert c.seed == 42


def test_eighteen_keys():
    assert len(CONFIG_KEYS) == 18
    assert CONFIG_KEYS[-1] == "seed"


def test_hidden_layers_list():
    assert parse_config_text("hidden_layers=[512,256]").hidden_layers == (512, 256)
    assert parse_config_text("hidden_layers = [ 64, 4 ]").hidden_layers == (64, 4)


def test_pivot_item_based():
    c = parse_config_text("pivot=[1,0]")
    assert c.item_based and c.pivot_index == (1, 0)
    assert parse_config_text("pivot=[0, 1]").pivot == "user"


def test_enums_case_insensitive_and_comments():
    c = parse_config_text("# a comment\noptimizer=adagrad  # trailing\nactivation=tanh\n\n")
    assert c.optimizer is OptimizerKind.ADAGRAD
    assert c.activation is Activation.TANH


@pytest.mark.parametrize(
    "text, key, line",
    [
        ("lr=0.1\nbogus=1", "bogus", 2),
        ("hidden_layers=512,256", "hidden_layers", 1),
        ("\n\ndrop_prob=1.0", "drop_prob", 3),
        ("epochs=2.5", "epochs", 1),
        ("optimizer=ADADELTA", "optimizer", 1),
        ("decoder_constraint=maybe", "decoder_constraint", 1),
        ("pivot=[1,1]", "pivot", 1),
        ("hidden_layers=[1,2,3,4,5,6]", "hidden_layers", 1),
        ("test_mask_rate=-0.1", "test_mask_rate", 1),
        ("lr=0.1\nlr=0.2", "lr", 2),
        ("lr", None, 1),
    ],
)
def test_invalid_files_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text, source="cfg")
    msg = str(info.value)
    assert msg.startswith(f"cfg:{line}:")
    if key is not None:
        assert key in msg
        others = [k for k in CONFIG_KEYS if k != key and f"'{k}'" in msg]
        assert not others


def test_parse_config_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("epochs=3\n")
    assert parse_config(p).epochs == 3


configs = st.builds(
    ModelConfig,
    lr=st.floats(1e-6, 1.0),
    weight_decay=st.floats(0, 1.0),
    hidden_layers=st.lists(st.integers(1, 4096), min_size=1, max_size=5).map(tuple),
    drop_prob=st.floats(0, 0.99),
    noise_prob=st.floats(0, 0.99),
    train_batch_size=st.integers(1, 1024),
    epochs=st.integers(0, 100),
    optimizer=st.sampled_from(list(OptimizerKind)),
    activation=st.sampled_from(list(Activation)),
    dense_refeed=st.integers(0, 5),
    dense_refeed_rounding=st.booleans(),
    decoder_constraint=st.booleans(),
    mean_normalization=st.booleans(),
    prediction_rounding=st.booleans(),
    pivot=st.sampled_from(["user", "item"]),
    test_mask_rate=st.floats(0, 0.99),
    test_split_rate=st.floats(0, 0.99),
    seed=st.integers(0, 2**63 - 1),
)


@settings(max_examples=200)
@given(configs)
def test_parse_serialize_roundtrip(config):
    text = serialize_config(config)
    again = parse_config_text(text)
    assert again == config
    assert serialize_config(again) == text
