import pytest
from hypothesis import given, settings

import helpers
from locic import ast
from locic.parser import ParseError, parse_module, parse_program, tokenize
from locic.render import render_module


def test_parse_simple_module():
    m = parse_module("module M { peer P { tie: single P } val i: Int on P = 1 }")
    assert m.name == "M"
    assert len(m.peers) == 1
    assert m.peers[0].name == "P"
    assert m.peers[0].ties == ((ast.Multiplicity.SINGLE, ast.PeerRef(None, "P")),)
    assert len(m.defs) == 1
    d = m.defs[0]
    assert d.name == "i"
    assert d.surface_type == ast.INT
    assert d.placed_on == ast.PeerRef(None, "P")
    assert d.body == ast.IntLit(1)


def test_parse_empty_module():
    m = parse_module("module Empty { }")
    assert m.name == "Empty"
    assert m.peers == ()
    assert m.defs == ()


def test_duplicate_name_rejected():
    with pytest.raises(ParseError) as exc:
        parse_module("module M { peer P { } peer P { } }")
    assert "duplicate name 'P'" in exc.value.diagnostics[0].message


def test_def_order_is_source_order():
    m = parse_module("""
        module M {
          peer P { tie: single P }
          val b: Int on P = 2
          val a: Int on P = 1
          val c: Int on P = 3
        }
    """)
    assert [d.name for d in m.defs] == ["b", "a", "c"]


def test_remote_access_and_stream_syntax():
    m = parse_module("""
        module M {
          include mon: Monitoring
          peer P : mon.Q { tie: single P, multiple mon.Q }
          source s: Stream[Int] on P
          val t: Stream[Int] on P = s.map(x => x * 2 + 1)
          val u: Future[(Int, Str)] on P = s.asLocal
          val v: Seq[(Remote[P], Future[Int])] on P = w.asLocalFromAll
          val w: Int on mon.Q = 4
        }
    """)
    assert m.includes == (ast.IncludeDecl("mon", "Monitoring"),)
    s, t, u, v, w = m.defs
    assert s.kind is ast.DefKind.STREAM_SOURCE and s.body is None
    assert isinstance(t.body, ast.StreamMap)
    assert t.body.var == "x"
    assert isinstance(u.body, ast.AsLocal)
    assert u.surface_type == ast.TFuture(ast.TTuple((ast.INT, ast.STR)))
    assert isinstance(v.body, ast.AsLocalFromAll)
    assert w.placed_on == ast.PeerRef("mon", "Q")


def test_comments_and_positions():
    src = "# leading comment\nmodule M {\n  peer P { }\n  val i: Int on Q = 1\n}\n"
    m = parse_module(src)
    assert m.defs[0].pos.line == 4
    assert m.defs[0].pos.col == 3


def test_syntax_error_carries_position_and_expectation():
    with pytest.raises(ParseError) as exc:
        parse_module("module M { peer }")
    d = exc.value.diagnostics[0]
    assert d.pos.line == 1
    assert d.pos.col == 17
    assert "expected" in d.message


def test_every_parse_diagnostic_has_a_position():
    bad_sources = [
        "module M { peer P { tie: walrus P } }",
        "module M { val i: Int on P }",
        "module M { val i: Unknown on P = 1 }",
        'module M { val s: Str on P = "unterminated }',
        "module",
    ]
    for src in bad_sources:
        with pytest.raises(ParseError) as exc:
            parse_module(src)
        for d in exc.value.diagnostics:
            assert d.pos.line >= 1 and d.pos.col >= 1


def test_tokenizer_tracks_lines_and_columns():
    toks = tokenize("module M\n  peer")
    assert (toks[0].pos.line, toks[0].pos.col) == (1, 1)
    assert (toks[1].pos.line, toks[1].pos.col) == (1, 8)
    assert (toks[2].pos.line, toks[2].pos.col) == (2, 3)


def test_multi_module_program():
    mods = parse_program(helpers.MONITORING_P2P)
    assert [m.name for m in mods] == ["Monitoring", "P2P"]
    with pytest.raises(ParseError) as exc:
        parse_program("module A { } module A { }")
    assert "duplicate module name" in exc.value.diagnostics[0].message


def test_render_empty_module():
    out = render_module(ast.SurfaceModule("Empty", (), (), ()))
    assert out.split() == ["module", "Empty", "{", "}"]


def test_render_round_trip_simple():
    src = "module M { peer P { tie: single P } val i: Int on P = 1 }"
    m = parse_module(src)
    assert parse_module(render_module(m)) == m


def test_render_precedence():
    m = parse_module("module M { val x: Int on P = 1 - (2 - 3) * 4 }")
    again = parse_module(render_module(m))
    assert again == m
    body = again.defs[0].body
    assert body.op == "-"
    assert body.right.op == "*"


@settings(max_examples=200, deadline=None)
@given(helpers.surface_modules())
def test_parse_render_round_trip(module):
    rendered = render_module(module)
    assert parse_module(rendered) == module


@settings(max_examples=100, deadline=None)
@given(helpers.surface_modules())
def test_render_is_stable(module):
    rendered = render_module(module)
    assert render_module(parse_module(rendered)) == rendered
