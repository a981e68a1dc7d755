import shutil

import pytest

from prefixpm import fixtures
from prefixpm.atoms import parse_atom
from prefixpm.errors import AmbiguousAtomError, ConfigError, MaskedError, NotFoundError, RecipeError
from prefixpm.repository import (
    Repository,
    add_overlay,
    best_match,
    find_recipes,
    keywords_accepted,
    load_repositories,
    parse_recipe,
    recipe_from_text,
    render_recipe,
    repos_conf_path,
    resolve_category,
)


def tree():
    return [Repository("main", fixtures.TREE, 0)]


def with_kde():
    return [Repository("kde", fixtures.OVERLAYS / "kde", 10)] + tree()


def mem_recipe(cpv, keywords="amd64-linux", slot="0", **extra):
    cat, rest = cpv.split("/")
    name, ver = rest.rsplit("-", 1)
    body = f'KEYWORDS="{keywords}"\nSLOT="{slot}"\n'
    body += "".join(f'{k}="{v}"\n' for k, v in extra.items())
    return recipe_from_text(body, cat, name, ver)


class TestLoadRepositories:
    def test_main_only(self, tmp_path):
        cfg = fixtures.install_config(tmp_path, "native")
        assert [r.name for r in load_repositories(cfg)] == ["main"]

    def test_overlay_sorts_first(self, tmp_path):
        cfg = fixtures.install_config(tmp_path, "native", overlays=[("kde", 10)])
        assert [r.name for r in load_repositories(cfg)] == ["kde", "main"]

    def test_ties_by_name(self, tmp_path):
        cfg = fixtures.install_config(tmp_path, "native", overlays=[("updates", 0), ("kde", 0)])
        assert [r.name for r in load_repositories(cfg)] == ["kde", "main", "updates"]

    def test_empty_conf(self, tmp_path):
        cfg = fixtures.install_config(tmp_path, "native")
        repos_conf_path(cfg).write_text("# nothing\n")
        with pytest.raises(ConfigError):
            load_repositories(cfg)

    def test_duplicate_name(self, tmp_path):
        cfg = fixtures.install_config(tmp_path, "native")
        repos_conf_path(cfg).write_text(f"main = {fixtures.TREE} 0\nmain = {fixtures.TREE} 1\n")
        with pytest.raises(ConfigError, match="duplicate"):
            load_repositories(cfg)

    def test_missing_path(self, tmp_path):
        cfg = fixtures.install_config(tmp_path, "native")
        repos_conf_path(cfg).write_text(f"main = {tmp_path}/nope 0\n")
        with pytest.raises(ConfigError, match="does not exist"):
            load_repositories(cfg)


class TestAddOverlay:
    def test_add_then_load(self, tmp_path):
        cfg = fixtures.install_config(tmp_path / "cfg", "native")
        add_overlay(cfg, "kde", fixtures.OVERLAYS / "kde")
        repos = load_repositories(cfg)
        assert [(r.name, r.priority) for r in repos] == [("kde", 10), ("main", 0)]
        best = best_match(parse_atom("dev-util/valgrind"), repos, {"~amd64-linux"})
        assert best.id.repository == "kde"

    def test_duplicate(self, tmp_path):
        cfg = fixtures.install_config(tmp_path / "cfg", "native")
        add_overlay(cfg, "kde", fixtures.OVERLAYS / "kde")
        with pytest.raises(ConfigError, match="already"):
            add_overlay(cfg, "kde", fixtures.OVERLAYS / "kde")

    def test_unreadable_path(self, tmp_path):
        cfg = fixtures.install_config(tmp_path / "cfg", "native")
        with pytest.raises(ConfigError):
            add_overlay(cfg, "ghost", tmp_path / "ghost")

    def test_removed_by_hand(self, tmp_path):
        cfg = fixtures.install_config(tmp_path / "cfg", "native")
        overlay = tmp_path / "kde"
        shutil.copytree(fixtures.OVERLAYS / "kde", overlay)
        add_overlay(cfg, "kde", overlay)
        shutil.rmtree(overlay)
        with pytest.raises(ConfigError):
            load_repositories(cfg)


class TestParseRecipe:
    def test_id_from_path(self):
        r = parse_recipe(fixtures.TREE / "dev-libs/libffi/libffi-3.2.1.recipe")
        assert r.id.cpv == "dev-libs/libffi-3.2.1"

    def test_slot(self):
        r = parse_recipe(fixtures.TREE / "dev-lang/python/python-2.7.12.recipe")
        assert r.slot == "2.7"
        assert {"ncurses", "readline", "tk"} <= r.iuse

    def test_defaults(self):
        r = recipe_from_text("", "app-misc", "bare", "1")
        assert r.slot == "0" and r.depend == r.rdepend == r.pdepend == ""
        assert r.phases == () and r.iuse == frozenset()

    def test_undeclared_flag(self):
        with pytest.raises(RecipeError, match="IUSE"):
            recipe_from_text('IUSE="a"\nDEPEND="b? ( x/y )"\n', "app-misc", "t", "1")

    def test_unknown_key(self):
        with pytest.raises(RecipeError, match="unknown key"):
            recipe_from_text('HOMEPAGE="x"\n', "app-misc", "t", "1")

    def test_unknown_phase(self):
        with pytest.raises(RecipeError, match="unknown phase"):
            recipe_from_text("[phase:test]\nfail x\n", "app-misc", "t", "1")

    def test_filename_mismatch(self, tmp_path):
        d = tmp_path / "app-misc" / "foo"
        d.mkdir(parents=True)
        (d / "bar-1.0.recipe").write_text("")
        with pytest.raises(RecipeError):
            parse_recipe(d / "bar-1.0.recipe")

    def test_phases_and_line_numbers(self):
        text = 'SLOT="1"\n\n[phase:compile]\n# note\ntoycc a.c -o b\n\n[phase:install]\nmake-dir ${D}/x\n'
        r = recipe_from_text(text, "app-misc", "t", "1")
        assert r.phase("compile") == ("toycc a.c -o b",)
        assert r.phase_linenos("compile") == (5,)
        assert r.phase_linenos("install") == (8,)

    def test_fixture_tree_roundtrip(self):
        count = 0
        for repo in tree() + [Repository("kde", fixtures.OVERLAYS / "kde"),
                              Repository("updates", fixtures.OVERLAYS / "updates")]:
            for r in repo.all_recipes():
                again = recipe_from_text(render_recipe(r), r.id.category, r.id.name,
                                         str(r.id.version), r.id.repository)
                assert again == r, r.id
                count += 1
        assert count >= 20


class TestFindAndMatch:
    def test_python_slot(self):
        assert [r.id.cpv for r in find_recipes(parse_atom("python:2.7"), tree())] == [
            "dev-lang/python-2.7.12"]

    def test_overlay_first(self):
        found = find_recipes(parse_atom("dev-util/valgrind"), with_kde())
        assert [r.id.repository for r in found] == ["kde"]
        assert str(found[0].id.version) == "3.12.0-r1"

    def test_shorthand(self):
        assert resolve_category(parse_atom("slurm"), tree()).category == "sys-cluster"

    def test_ambiguous_shorthand(self):
        repos = [Repository.from_recipes("a", [mem_recipe("app-misc/dup-1"),
                                               mem_recipe("dev-util/dup-1")])]
        with pytest.raises(AmbiguousAtomError) as exc:
            find_recipes(parse_atom("dup"), repos)
        assert sorted(exc.value.candidates) == ["app-misc/dup", "dev-util/dup"]

    def test_keyword_masked(self):
        with pytest.raises(MaskedError):
            best_match(parse_atom("python:2.7"), tree(), {"amd64-linux"})

    def test_testing_keyword_accepted(self):
        assert best_match(parse_atom("python:2.7"), tree(), {"~amd64-linux"}).id.cpv == (
            "dev-lang/python-2.7.12")

    def test_not_found(self):
        with pytest.raises(NotFoundError):
            best_match(parse_atom("nosuch/pkg"), tree(), {"**"})

    def test_highest_accepted_version(self):
        repo = Repository.from_recipes("m", [
            mem_recipe("app-misc/v-1.0"), mem_recipe("app-misc/v-2.0"),
            mem_recipe("app-misc/v-3.0", keywords="~amd64-linux")])
        assert str(best_match(parse_atom("app-misc/v"), [repo], {"amd64-linux"}).id.version) == "2.0"
        assert str(best_match(parse_atom("app-misc/v"), [repo], {"~amd64-linux"}).id.version) == "3.0"

    def test_priority_beats_version(self):
        low = Repository.from_recipes("low", [mem_recipe("app-misc/v-9.0")], priority=0)
        high = Repository.from_recipes("high", [mem_recipe("app-misc/v-1.0")], priority=5)
        assert best_match(parse_atom("app-misc/v"), [low, high], {"**"}).id.repository == "high"

    @pytest.mark.parametrize("keywords,accept,ok", [
        ({"amd64-linux"}, {"amd64-linux"}, True),
        ({"~amd64-linux"}, {"amd64-linux"}, False),
        ({"~amd64-linux"}, {"~amd64-linux"}, True),
        ({"amd64-linux"}, {"~amd64-linux"}, True),
        ({"x86-linux"}, {"amd64-linux"}, False),
        (set(), {"**"}, True),
    ])
    def test_keyword_rules(self, keywords, accept, ok):
        assert keywords_accepted(keywords, accept) is ok

    def test_deterministic(self):
        a = [r.id.cpv for r in find_recipes(parse_atom("dev-libs/libffi"), tree())]
        b = [r.id.cpv for r in find_recipes(parse_atom("dev-libs/libffi"), tree())]
        assert a == b == ["dev-libs/libffi-3.3", "dev-libs/libffi-3.2.1"]
