"""Canonicalization helpers: whitespace, numbers, timestamps."""

from decimal import Decimal

from docrefinery.normalize import (
    canonical_number,
    matches_timestamp_layout,
    normalize_timestamp,
    normalize_whitespace,
    parse_iso_timestamp,
    parse_number,
)


class TestNormalizeWhitespace:
    def test_collapses_horizontal_runs(self):
        assert normalize_whitespace("a \t  b\fc") == "a b c"

    def test_trims_line_edges(self):
        assert normalize_whitespace("  padded line \t") == "padded line"

    def test_preserves_single_line_breaks(self):
        # Log lines must stay separate.
        assert normalize_whitespace("line one\nline two") == "line one\nline two"

    def test_squeezes_blank_line_runs_to_one(self):
        assert normalize_whitespace("para one\n\n\n\npara two") == "para one\n\npara two"

    def test_drops_leading_and_trailing_blank_lines(self):
        assert normalize_whitespace("\n\n  \nbody\n \n\n") == "body"

    def test_idempotent(self):
        messy = "  a\tb \n\n\n c \n\n"
        once = normalize_whitespace(messy)
        assert normalize_whitespace(once) == once

    def test_empty_input(self):
        assert normalize_whitespace("") == ""
        assert normalize_whitespace(" \n \t \n ") == ""


class TestParseNumber:
    def test_plain_integer_string(self):
        assert parse_number("42") == Decimal("42")

    def test_decimal_string(self):
        assert parse_number("3.14") == Decimal("3.14")

    def test_negative_and_signed(self):
        assert parse_number("-17.5") == Decimal("-17.5")
        assert parse_number("+8") == Decimal("8")

    def test_thousands_separators(self):
        assert parse_number("1,234,567.89") == Decimal("1234567.89")

    def test_currency_symbol_stripped(self):
        assert parse_number("$1,299.00") == Decimal("1299.00")
        assert parse_number("€45") == Decimal("45")

    def test_currency_code_stripped(self):
        assert parse_number("1250 USD") == Decimal("1250")
        assert parse_number("eur 99.95") == Decimal("99.95")

    def test_int_and_float_inputs(self):
        assert parse_number(7) == Decimal("7")
        assert parse_number(2.5) == Decimal("2.5")

    def test_decimal_passthrough(self):
        assert parse_number(Decimal("0.125")) == Decimal("0.125")

    def test_bool_rejected(self):
        # JSON true in a number field is a type error, not the number 1.
        assert parse_number(True) is None
        assert parse_number(False) is None

    def test_non_numeric_rejected(self):
        assert parse_number("twelve") is None
        assert parse_number("") is None
        assert parse_number(None) is None
        assert parse_number("1.2.3") is None

    def test_underscore_and_space_grouping(self):
        assert parse_number("12_000") == Decimal("12000")
        assert parse_number("1 250") == Decimal("1250")


class TestCanonicalNumber:
    def test_fixed_four_fraction_digits(self):
        assert canonical_number(Decimal("42")) == "42.0000"
        assert canonical_number(Decimal("3.14")) == "3.1400"

    def test_rounds_half_up(self):
        assert canonical_number(Decimal("0.00005")) == "0.0001"
        assert canonical_number(Decimal("1.99995")) == "2.0000"

    def test_negative(self):
        assert canonical_number(Decimal("-2.5")) == "-2.5000"

    def test_idempotent_through_reparse(self):
        text = canonical_number(Decimal("1234.56789"))
        assert canonical_number(parse_number(text)) == text


class TestParseIsoTimestamp:
    def test_plain_date_time(self):
        parsed = parse_iso_timestamp("2025-06-01T12:30:00")
        assert parsed is not None
        assert parsed.year == 2025 and parsed.minute == 30

    def test_trailing_z_designator(self):
        # 3.10's fromisoformat rejects Z; the helper must accept it.
        parsed = parse_iso_timestamp("2025-06-01T12:30:00Z")
        assert parsed is not None
        assert parsed.utcoffset().total_seconds() == 0

    def test_explicit_offset(self):
        parsed = parse_iso_timestamp("2025-06-01T12:30:00+02:00")
        assert parsed.utcoffset().total_seconds() == 7200

    def test_invalid_returns_none(self):
        assert parse_iso_timestamp("last tuesday") is None
        assert parse_iso_timestamp("") is None


class TestTimestampLayouts:
    def test_default_layout_is_iso(self):
        assert matches_timestamp_layout("2025-06-01T00:00:00Z")
        assert matches_timestamp_layout("2025-06-01")
        assert not matches_timestamp_layout("06/01/2025 13:00")

    def test_custom_layout(self):
        assert matches_timestamp_layout("01.06.2025 13:00:00", "%d.%m.%Y %H:%M:%S")
        assert not matches_timestamp_layout("2025-06-01", "%d.%m.%Y %H:%M:%S")

    def test_non_string_and_blank(self):
        assert not matches_timestamp_layout(123)
        assert not matches_timestamp_layout("   ")


class TestNormalizeTimestamp:
    def test_conforming_value_unchanged(self):
        assert normalize_timestamp("2025-06-01T12:00:00+00:00") == "2025-06-01T12:00:00+00:00"

    def test_z_suffix_conforms_and_passes_through(self):
        assert normalize_timestamp("2025-06-01T12:00:00Z") == "2025-06-01T12:00:00Z"

    def test_fallback_layout_rerendered_to_iso(self):
        assert normalize_timestamp("2025/06/01 13:45:00") == "2025-06-01T13:45:00"

    def test_iso_rerendered_to_custom_layout(self):
        out = normalize_timestamp("2025-06-01T13:45:00", "%d.%m.%Y %H:%M:%S")
        assert out == "01.06.2025 13:45:00"

    def test_unparseable_returned_verbatim(self):
        assert normalize_timestamp("around noonish") == "around noonish"

    def test_idempotent(self):
        once = normalize_timestamp("2025/06/01 13:45:00")
        assert normalize_timestamp(once) == once
