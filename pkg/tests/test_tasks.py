import itertools
import string

import numpy as np
import pytest
from scipy import stats

from holocell import tasks
from holocell.errors import ContractError


def take_symbols(stream, n):
    return list(itertools.islice(stream.symbols(), n))


def render(stream, pairs):
    return "".join(stream.vocab.chars[s] for s, _ in pairs)


class TestCopy:
    def test_fixed_length_structure(self):
        ep = tasks.gen_copy(0)
        k, blanks = 10, 100
        assert len(ep.inputs) == k + blanks + 1 + k
        data = ep.inputs[:k]
        assert data.max() < 8
        np.testing.assert_array_equal(ep.inputs[k:k + blanks], np.full(blanks, 8))
        assert ep.inputs[k + blanks] == 9  # delimiter
        np.testing.assert_array_equal(ep.inputs[k + blanks + 1:], np.full(k, 8))
        assert ep.mask.sum() == k
        assert ep.mask[k + blanks + 1:].all() and not ep.mask[:k + blanks + 1].any()
        np.testing.assert_array_equal(ep.targets[ep.mask], data)

    def test_vocab_sizes(self):
        in_v, out_v = tasks.copy_vocabs()
        assert in_v.size == 10
        assert out_v.size == 8
        assert in_v.chars[:8] == out_v.chars

    def test_deterministic(self):
        a, b = tasks.gen_copy(7), tasks.gen_copy(7)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        assert not np.array_equal(a.inputs, tasks.gen_copy(8).inputs)

    def test_variable_length_uniform(self):
        ks = [tasks.gen_copy(s, fixed_len=False).mask.sum() for s in range(10_000)]
        counts = np.bincount(ks, minlength=11)[1:]
        assert counts.min() > 0
        _, p = stats.chisquare(counts)
        assert p > 0.01

    def test_symbols_uniform(self):
        data = np.concatenate([tasks.gen_copy(s).inputs[:10] for s in range(2_000)])
        _, p = stats.chisquare(np.bincount(data, minlength=8))
        assert p > 0.01


class TestWindows:
    def test_lengths_and_no_gaps(self):
        v = tasks.Vocab(tuple("ab"))
        syms = [(i % 2, True) for i in range(251)]
        stream = tasks.Stream(v, lambda: iter(syms))
        eps = list(stream.windows(100))
        assert [len(e.inputs) for e in eps] == [100, 100, 50]
        joined_in = np.concatenate([e.inputs for e in eps])
        joined_tg = np.concatenate([e.targets for e in eps])
        np.testing.assert_array_equal(joined_in, [s for s, _ in syms[:-1]])
        np.testing.assert_array_equal(joined_tg, [s for s, _ in syms[1:]])

    def test_targets_shift_inputs_by_one(self):
        stream = tasks.gen_xml(0)
        ep = next(stream.windows(200))
        np.testing.assert_array_equal(ep.inputs[1:], ep.targets[:-1])

    def test_bad_length(self):
        stream = tasks.gen_xml(0)
        with pytest.raises(ContractError):
            next(stream.windows(0))


class TestXml:
    def test_well_formed_and_depth_bounded(self):
        stream = tasks.gen_xml(1)
        text = render(stream, take_symbols(stream, 5000))
        depth = 0
        stack = []
        i = 0
        # drop a possibly unterminated trailing tag
        text = text[: text.rfind(">") + 1]
        while i < len(text):
            assert text[i] == "<"
            close = text.index(">", i)
            body = text[i + 1: close]
            if body.startswith("/"):
                assert stack.pop() == body[1:]
                depth -= 1
            else:
                assert 1 <= len(body) <= 10
                assert all(c in string.ascii_lowercase for c in body)
                stack.append(body)
                depth += 1
            assert 0 <= depth <= 4
            i = close + 1

    def test_cost_marks_forced_characters(self):
        stream = tasks.gen_xml(2)
        pairs = take_symbols(stream, 3000)
        chars = [stream.vocab.chars[s] for s, _ in pairs]
        in_close = False
        for idx, ((_, counted), ch) in enumerate(zip(pairs, chars)):
            if ch == "<":
                assert counted  # tags are back to back, '<' is forced
                in_close = chars[idx + 1] == "/" if idx + 1 < len(chars) else False
            elif ch == "/":
                assert not counted
            elif in_close:
                assert counted  # closing name + '>' forced by the stack
                if ch == ">":
                    in_close = False
            else:
                assert not counted

    def test_deterministic(self):
        a = take_symbols(tasks.gen_xml(3), 500)
        assert a == take_symbols(tasks.gen_xml(3), 500)
        assert a != take_symbols(tasks.gen_xml(4), 500)


class TestVarAssign:
    def test_answers_match_dictionary(self):
        stream = tasks.gen_var_assign(5)
        text = render(stream, take_symbols(stream, 5000))
        checked = 0
        for block in text.split(".")[:-1]:
            env = {}
            rest = block
            while rest.startswith("s("):
                inner = rest[2: rest.index(")")]
                name, val = inner.rsplit(",", 1)
                assert name not in env  # no duplicates within a block
                assert 1 <= len(name) <= 4
                env[name] = val
                rest = rest[rest.index(")") + 2:]  # skip '),'
            assert rest.startswith("q(")
            qname = rest[2: rest.index(")")]
            answer = rest[rest.index(")") + 1:]
            assert env[qname] == answer
            checked += 1
        assert checked > 50

    def test_cost_marks_answer_and_period(self):
        stream = tasks.gen_var_assign(6)
        pairs = take_symbols(stream, 2000)
        chars = [stream.vocab.chars[s] for s, _ in pairs]
        for idx, ((_, counted), ch) in enumerate(zip(pairs, chars)):
            if counted:
                # counted chars are exactly the answer (just after 'q(...)')
                # and the '.' that follows it
                if ch == ".":
                    assert pairs[idx - 1][1]
                else:
                    assert chars[idx - 1] == ")" and chars[idx + 1] == "."
            elif ch == ".":
                pytest.fail("'.' must always be counted")

    def test_deterministic(self):
        assert take_symbols(tasks.gen_var_assign(7), 300) == \
               take_symbols(tasks.gen_var_assign(7), 300)


class TestArithmetic:
    def parse(self, text):
        for expr in text.split("]")[:-1]:
            lhs, result = expr.split("=")
            # first operand may be negative; the operator is the last +/-
            op_idx = max(lhs.rfind("+"), lhs.rfind("-", 1))
            a, b = int(lhs[:op_idx]), int(lhs[op_idx + 1:])
            op = lhs[op_idx]
            yield a, op, b, result

    def test_results_match_integer_arithmetic(self):
        stream = tasks.gen_arithmetic(8)
        text = render(stream, take_symbols(stream, 8000))
        text = text[: text.rfind("]") + 1]
        checked = 0
        for a, op, b, result in self.parse(text):
            expected = a + b if op == "+" else a - b
            assert int(result[::-1]) == expected
            checked += 1
        assert checked > 100

    def test_operand_ranges(self):
        stream = tasks.gen_arithmetic(9)
        text = render(stream, take_symbols(stream, 20_000))
        text = text[: text.rfind("]") + 1]
        signs = []
        for a, op, b, _ in self.parse(text):
            assert abs(a) < 10 ** 8 and 0 <= b < 10 ** 8
            s = str(abs(a))
            assert len(s) == 1 or s[0] != "0"  # no leading zeros
            signs.append(a < 0)
        frac = np.mean(signs)
        assert 0.4 < frac < 0.6

    def test_cost_marks_reversed_result(self):
        stream = tasks.gen_arithmetic(10)
        pairs = take_symbols(stream, 2000)
        chars = [stream.vocab.chars[s] for s, _ in pairs]
        after_eq = False
        for (_, counted), ch in zip(pairs, chars):
            if ch == "=":
                assert not counted
                after_eq = True
            elif ch == "]":
                assert counted
                after_eq = False
            else:
                assert counted == after_eq

    def test_deterministic(self):
        assert take_symbols(tasks.gen_arithmetic(11), 300) == \
               take_symbols(tasks.gen_arithmetic(11), 300)


class TestBytes:
    def test_split_and_content(self, tmp_path):
        payload = bytes(range(256)) * 4  # 1024 bytes
        f = tmp_path / "data.bin"
        f.write_bytes(payload)
        train = tasks.gen_bytes(f, test_fraction=0.2, part="train")
        test = tasks.gen_bytes(f, test_fraction=0.2, part="test")
        tr = [s for s, c in train.symbols()]
        te = [s for s, c in test.symbols()]
        assert len(tr) == 819 and len(te) == 205
        assert bytes(tr + te) == payload
        assert all(c for _, c in test.symbols())

    def test_missing_file(self, tmp_path):
        with pytest.raises(ContractError):
            tasks.gen_bytes(tmp_path / "nope.bin")

    def test_bad_part(self, tmp_path):
        f = tmp_path / "d.bin"
        f.write_bytes(b"abc")
        with pytest.raises(ContractError):
            tasks.gen_bytes(f, part="dev")


class TestEpisodeValidation:
    def test_length_mismatch(self):
        v = tasks.Vocab(tuple("ab"))
        with pytest.raises(ContractError):
            tasks.Episode(np.zeros(3, dtype=np.intp), np.zeros(2, dtype=np.intp),
                          np.zeros(3, dtype=bool), v, v)

    def test_masked_target_out_of_range(self):
        v = tasks.Vocab(tuple("ab"))
        with pytest.raises(ContractError):
            tasks.Episode(np.zeros(2, dtype=np.intp), np.array([0, 5]),
                          np.array([False, True]), v, v)

    def test_one_hot(self):
        out = tasks.one_hot(np.array([2, 0]), 3)
        np.testing.assert_array_equal(out, [[0, 0, 1], [1, 0, 0]])


def test_format_episode_marks_masked_steps():
    ep = tasks.gen_copy(12, n_chars=3, n_blanks=2)
    text = tasks.format_episode(ep)
    lines = text.splitlines()
    assert len(lines[1].rstrip()) == len(lines[0])
    assert lines[1].count("^") == 3
