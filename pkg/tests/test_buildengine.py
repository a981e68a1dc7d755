import os

import pytest

from conftest import drop_user_patch
from oracles import sha256_hex, tree_snapshot
from prefixpm import fixtures
from prefixpm.atoms import parse_atom, parse_cpv
from prefixpm.buildengine import execute_plan, merge, prepare_context, run_phases, unmerge
from prefixpm.config import EffectiveUse, compute_use, load_config
from prefixpm.errors import (CollisionError, CommandError, FormatError, NotInstalledError,
                             ParseError, PhaseError, SandboxViolation)
from prefixpm.interp import BuildContext, inspect_machine, interpret_command, tokenize, toy_compile
from prefixpm.repository import Repository, best_match, load_repositories, recipe_from_text
from prefixpm.resolver import solve
from prefixpm.vdb import ContentsEntry, EmptyVdb, Vdb, VdbEntry


@pytest.fixture
def ctx(tmp_path):
    s, d, dist = tmp_path / "S", tmp_path / "D", tmp_path / "dist"
    for p in (s, d, dist):
        p.mkdir()
    env = {"S": str(s), "D": str(d), "EPREFIX": "", "CFLAGS": "-O2", "HOME_": "h"}
    return BuildContext(S=s, D=d, env=env, use=EffectiveUse(frozenset()), target_root=tmp_path / "r",
                        eprefix="", chost="x86_64-k1om-linux-gnu", cbuild="x86_64-pc-linux-gnu",
                        distdir=dist)


class TestInterpreter:
    def test_tokenize(self):
        env = {"D": "/img", "EMPTY": ""}
        assert tokenize('echo-to ${D}/f "a b" $EMPTY${D}x', env) == ["echo-to", "/img/f", "a b",
                                                                    "/imgx"]
        assert tokenize("   ", env) == []
        with pytest.raises(ParseError):
            tokenize('echo "open', env)

    def test_toycc_machine(self, ctx):
        (ctx.S / "main.c").write_text("int main;\n")
        interpret_command("toycc main.c -o ${D}/usr/bin/python2.7", ctx)
        out = ctx.D / "usr/bin/python2.7"
        assert inspect_machine(out) == "x86_64-k1om-linux-gnu"
        data = out.read_bytes()
        assert data.startswith(b"!TOYOBJ 1\nMACHINE: x86_64-k1om-linux-gnu\nCFLAGS: -O2\n\n")
        assert os.access(out, os.X_OK)
        assert not (ctx.D / "usr/bin/python2.7.debug").exists()

    def test_toycc_debug_output(self, ctx):
        ctx.env["CFLAGS"] = "-O2 -ggdb -pipe"
        (ctx.S / "a.c").write_text("x\n")
        interpret_command("toycc a.c -o ${D}/lib.so", ctx)
        assert (ctx.D / "lib.so.debug").read_bytes().startswith(b"!TOYDEBUG 1\n")

    def test_toycc_error_on(self, ctx):
        (ctx.S / "a.c").write_text("#error-on *-k1om-* no k1om here\n")
        with pytest.raises(CommandError, match="no k1om here"):
            interpret_command("toycc a.c -o ${D}/a", ctx)
        ctx.chost = "x86_64-pc-linux-gnu"
        interpret_command("toycc a.c -o ${D}/a", ctx)

    def test_fail(self, ctx):
        with pytest.raises(CommandError, match="^boom$"):
            interpret_command("fail boom", ctx)

    def test_echo_to_digest(self, ctx):
        interpret_command("echo-to ${D}/f.txt hi", ctx)
        assert sha256_hex((ctx.D / "f.txt").read_bytes()) == sha256_hex(b"hi\n")

    def test_install_file_mode(self, ctx):
        (ctx.S / "src").write_text("payload")
        interpret_command("install-file -m 0600 src ${D}/etc/conf", ctx)
        dst = ctx.D / "etc/conf"
        assert dst.read_text() == "payload"
        assert dst.stat().st_mode & 0o777 == 0o600

    def test_make_dir_and_sym(self, ctx):
        interpret_command("make-dir ${D}/usr/share/doc", ctx)
        interpret_command("make-sym ../lib/libx.so.1 ${D}/usr/lib64/libx.so", ctx)
        assert (ctx.D / "usr/share/doc").is_dir()
        assert os.readlink(ctx.D / "usr/lib64/libx.so") == "../lib/libx.so.1"

    @pytest.mark.parametrize("line", [
        "echo-to ${D}/../../escape.txt x",
        "make-dir /tmp/definitely-not-allowed-pm",
        "toycc a.c -o ${S}/../out",
        "make-sym target ${D}/../../link",
    ])
    def test_sandbox(self, ctx, line):
        (ctx.S / "a.c").write_text("x\n")
        with pytest.raises(SandboxViolation):
            interpret_command(line, ctx)

    def test_sandbox_through_symlink(self, ctx, tmp_path):
        os.symlink(tmp_path, ctx.D / "sneaky")
        with pytest.raises(SandboxViolation):
            interpret_command("echo-to ${D}/sneaky/x.txt hi", ctx)

    @pytest.mark.parametrize("line", ["make-dir", "make-sym a", "toycc -o", "install-file a",
                                      "echo-to"])
    def test_arity(self, ctx, line):
        with pytest.raises(CommandError):
            interpret_command(line, ctx)

    def test_external(self, ctx):
        assert interpret_command("true", ctx) == 0
        assert interpret_command("false", ctx) != 0
        with pytest.raises(CommandError, match="not found"):
            interpret_command("no-such-command-pm-test", ctx)

    def test_inspect_rejects_text(self, tmp_path):
        p = tmp_path / "t.txt"
        p.write_text("hello\n")
        with pytest.raises(FormatError):
            inspect_machine(p)

    def test_native_machine(self):
        data = toy_compile([b"x"], "x86_64-pc-linux-gnu", "")
        assert b"MACHINE: x86_64-pc-linux-gnu\n" in data


def setup(tmp_path, profile="native", overlays=()):
    cfg_dir = fixtures.install_config(tmp_path / "cfg", profile, overlays)
    root = tmp_path / "root"
    root.mkdir(exist_ok=True)
    config = load_config(cfg_dir, root=root)
    repos = load_repositories(cfg_dir)
    vdb = Vdb(root)
    vdb.init()
    return cfg_dir, config, repos, vdb


def build(config, repos, vdb, *atoms, **kw):
    plan = solve([parse_atom(a) for a in atoms], config, EmptyVdb(), vdb, repos, **kw)
    return execute_plan(plan, config, vdb)


def mem_recipe(cpv, body):
    pkg = parse_cpv(cpv)
    return recipe_from_text(body, pkg.category, pkg.name, str(pkg.version))


class TestRunPhases:
    def test_install_only(self, tmp_path):
        _, config, repos, _ = setup(tmp_path)
        recipe = best_match(parse_atom("app-misc/hello"), repos, config.accept_keywords)
        ctx = prepare_context(config, recipe, compute_use(config, recipe), tmp_path / "tmp")
        d = run_phases(recipe, ctx)
        assert (d / "usr/bin/hello").is_file()

    def test_empty(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        (entry,) = build(config, repos, vdb, "app-misc/empty")
        assert entry.contents == []
        assert vdb.get("app-misc/empty-1.0") is not None

    def test_phase_error_reports_line(self, tmp_path):
        _, config, _, _ = setup(tmp_path)
        recipe = mem_recipe("app-misc/bad-1", "SLOT=0\n\n[phase:compile]\necho-to ${S}/x ok\nfail boom\n")
        ctx = prepare_context(config, recipe, EffectiveUse(frozenset()), tmp_path / "tmp")
        with pytest.raises(PhaseError) as exc:
            run_phases(recipe, ctx)
        assert exc.value.phase == "compile" and exc.value.lineno == 5
        assert "boom" in str(exc.value)

    def test_external_failure_output_captured(self, tmp_path):
        _, config, _, _ = setup(tmp_path)
        recipe = mem_recipe("app-misc/bad-1", "[phase:configure]\nsh -c \"echo oops >&2; exit 3\"\n")
        ctx = prepare_context(config, recipe, EffectiveUse(frozenset()), tmp_path / "tmp")
        with pytest.raises(PhaseError) as exc:
            run_phases(recipe, ctx)
        assert "status 3" in str(exc.value)
        assert "oops" in exc.value.output

    def test_missing_source(self, tmp_path):
        _, config, _, _ = setup(tmp_path)
        recipe = mem_recipe("app-misc/bad-1", 'SRC="files/nope.c"\n')
        ctx = prepare_context(config, recipe, EffectiveUse(frozenset()), tmp_path / "tmp")
        with pytest.raises(PhaseError, match="missing source"):
            run_phases(recipe, ctx)

    def test_libffi_needs_user_patch(self, tmp_path):
        cfg_dir, config, repos, vdb = setup(tmp_path, "k1om")
        with pytest.raises(PhaseError, match="k1om"):
            build(config, repos, vdb, "=dev-libs/libffi-3.2.1")
        drop_user_patch(cfg_dir, "libffi-3.2.1")
        config = load_config(cfg_dir, root=config.root)
        (entry,) = build(config, repos, vdb, "=dev-libs/libffi-3.2.1")
        assert entry.chost == "x86_64-k1om-linux-gnu"

    def test_sandbox_over_fixture_suite(self, tmp_path):
        """No phase of any fixture package writes outside S, D or the distfiles cache."""
        _, config, repos, _ = setup(tmp_path)
        watched = tmp_path / "watched"
        tmp, dist = watched / "tmp", watched / "dist"
        tmp.mkdir(parents=True)
        outside = watched / "bystander.txt"
        outside.write_text("still here\n")
        tree_before = tree_snapshot(fixtures.TREE)
        count = 0
        for repo in repos:
            for recipe in repo.all_recipes():
                ctx = prepare_context(config, recipe, compute_use(config, recipe), tmp, dist)
                before = tree_snapshot(watched)
                run_phases(recipe, ctx)
                after = tree_snapshot(watched)
                allowed = [os.path.relpath(p, watched) for p in (ctx.S, ctx.D, dist)]
                changed = {k for k in set(before) | set(after) if before.get(k) != after.get(k)}
                stray = {k for k in changed
                         if not any(k == a or k.startswith(a + os.sep) for a in allowed)}
                assert stray == set(), (recipe.id.cpv, stray)
                count += 1
        assert count >= 20
        assert tree_snapshot(fixtures.TREE) == tree_before
        assert outside.read_text() == "still here\n"


class TestMerge:
    def test_vdb_layout(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        build(config, repos, vdb, "app-misc/links")
        d = vdb.db_dir / "app-misc" / "links-1.0"
        for name in ("SLOT", "USE", "CHOST", "BUILD_ENV", "CONTENTS", "DEPEND", "RDEPEND",
                     "PDEPEND", "REASON"):
            assert (d / name).exists(), name
        kinds = {line.split()[0] for line in (d / "CONTENTS").read_text().splitlines()}
        assert kinds == {"obj", "dir", "sym"}
        assert (d / "REASON").read_text() == "target\n"
        assert vdb.world_file.read_text() == "app-misc/links\n"

    def test_digest_integrity(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        build(config, repos, vdb, "python:2.7")
        checked = 0
        for entry in vdb.entries():
            for c in entry.contents:
                if c.kind == "obj":
                    data = (config.root / c.path.lstrip("/")).read_bytes()
                    assert c.digest == sha256_hex(data)
                    checked += 1
        assert checked >= 7

    def test_vdb_chost_matches_artifacts(self, tmp_path):
        cfg_dir, config, repos, vdb = setup(tmp_path, "k1om")
        drop_user_patch(cfg_dir, "libffi-3.2.1")
        config = load_config(cfg_dir, root=config.root)
        build(config, repos, vdb, "python:2.7")
        for entry in vdb.entries():
            assert entry.chost == "x86_64-k1om-linux-gnu"
            for c in entry.contents:
                path = config.root / c.path.lstrip("/")
                if c.kind == "obj" and path.read_bytes().startswith(b"!TOYOBJ"):
                    assert inspect_machine(path) == entry.chost

    def test_dependencies_not_in_world(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        build(config, repos, vdb, "python:2.7")
        assert vdb.world_file.read_text() == "dev-lang/python:2.7\n"
        assert vdb.get("sys-libs/zlib-1.2.11").reason == "depend"

    def test_remerge_identical_contents(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        build(config, repos, vdb, "app-misc/links")
        first = (vdb.db_dir / "app-misc/links-1.0/CONTENTS").read_text()
        build(config, repos, vdb, "app-misc/links", reinstall_targets=True)
        assert (vdb.db_dir / "app-misc/links-1.0/CONTENTS").read_text() == first

    def test_collision(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        build(config, repos, vdb, "app-misc/collide-a")
        target = config.root / "usr/share/collide.txt"
        before = target.read_bytes()
        with pytest.raises(CollisionError) as exc:
            build(config, repos, vdb, "app-misc/collide-b")
        assert exc.value.collisions == [("/usr/share/collide.txt", "app-misc/collide-a-1.0")]
        assert target.read_bytes() == before
        assert vdb.get("app-misc/collide-b-1.0") is None
        assert exc.value.exit_code == 5

    def test_rollback_on_filesystem_error(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        # a directory sitting where the package wants a file makes the copy fail midway
        blocker = config.root / "usr" / "share" / "shared" / "b.txt"
        recipe = mem_recipe("app-misc/blocked-1", "[phase:install]\n"
                            "echo-to ${D}/usr/share/aaa.txt first\n"
                            "echo-to ${D}/usr/share/shared/b.txt second\n")
        blocker.mkdir(parents=True)
        before = tree_snapshot(config.root)
        ctx = prepare_context(config, recipe, EffectiveUse(frozenset()), tmp_path / "tmp")
        run_phases(recipe, ctx)
        with pytest.raises(Exception):
            merge(recipe, ctx, vdb)
        assert tree_snapshot(config.root) == before

    def test_splitdebug_reroutes(self, tmp_path):
        cfg_dir, config, repos, vdb = setup(tmp_path)
        (cfg_dir / "etc/pm/package.env").write_text("dev-lang/R debug-cflags.conf\n")
        config = load_config(cfg_dir, root=config.root)
        (entry,) = build(config, repos, vdb, "dev-lang/R")
        paths = entry.owned_paths()
        assert "/usr/lib/debug/usr/lib/libR.so.debug" in paths
        assert "/usr/lib/libR.so.debug" not in paths
        assert entry.build_env["CFLAGS"] == "-O2 -ggdb -pipe"
        assert entry.build_env["FEATURES"] == "collision-protect splitdebug"

    def test_prefix_offset(self, tmp_path):
        cfg_dir = fixtures.install_config(tmp_path / "cfg", "native")
        root = tmp_path / "root"
        config = load_config(cfg_dir, root=root, eprefix="/opt/gp")
        vdb = Vdb(root, "/opt/gp")
        vdb.init()
        build(config, load_repositories(cfg_dir), vdb, "app-misc/hello")
        assert (root / "opt/gp/usr/bin/hello").is_file()
        assert (root / "opt/gp/var/db/pm/app-misc/hello-1.0").is_dir()
        entry = vdb.get("app-misc/hello-1.0")
        assert "/opt/gp/usr/bin/hello" in entry.owned_paths()
        assert "/opt" not in entry.owned_paths() and "/opt/gp" not in entry.owned_paths()


class TestUnmerge:
    def test_roundtrip_every_fixture(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        before = tree_snapshot(config.root)
        for repo in repos:
            for recipe in repo.all_recipes():
                entries = build(config, repos, vdb, f"={recipe.id.cpv}")
                for e in reversed(entries):
                    unmerge(e.id, vdb)
                assert tree_snapshot(config.root) == before, recipe.id.cpv

    def test_user_modified_file_preserved(self, tmp_path, caplog):
        _, config, repos, vdb = setup(tmp_path)
        build(config, repos, vdb, "app-misc/hello")
        target = config.root / "usr/bin/hello"
        data = bytearray(target.read_bytes())
        data[-1] ^= 1
        target.write_bytes(bytes(data))
        removed = unmerge(parse_cpv("app-misc/hello-1.0"), vdb)
        assert "/usr/bin/hello" not in removed
        assert target.read_bytes() == bytes(data)
        assert "modified" in caplog.text
        assert vdb.get("app-misc/hello-1.0") is None

    def test_shared_directory_retained(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        build(config, repos, vdb, "app-misc/shared-a", "app-misc/shared-b")
        unmerge(parse_cpv("app-misc/shared-a-1.0"), vdb)
        shared = config.root / "usr/share/shared"
        assert shared.is_dir()
        assert sorted(os.listdir(shared)) == ["b.txt"]
        unmerge(parse_cpv("app-misc/shared-b-1.0"), vdb)
        assert not shared.exists()

    def test_not_installed(self, tmp_path):
        _, _, _, vdb = setup(tmp_path)
        with pytest.raises(NotInstalledError):
            unmerge(parse_cpv("app-misc/hello-1.0"), vdb)


class TestSlots:
    def test_two_slots_coexist(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        build(config, repos, vdb, "python:2.7", "python:3.5")
        assert vdb.get("dev-lang/python-2.7.12") and vdb.get("dev-lang/python-3.5.2")
        assert (config.root / "usr/bin/python2.7").is_file()
        assert (config.root / "usr/bin/python3.5").is_file()

    def test_same_slot_upgrade_no_orphans(self, tmp_path):
        _, config, repos, vdb = setup(tmp_path)
        build(config, repos, vdb, "python:2.7")
        repos = [Repository("updates", fixtures.OVERLAYS / "updates", 10)] + repos
        build(config, repos, vdb, "python:2.7", reinstall_targets=True)
        assert vdb.get("dev-lang/python-2.7.12") is None
        entry = vdb.get("dev-lang/python-2.7.14")
        assert not (config.root / "usr/lib/python2.7/compat.py").exists()
        assert (config.root / "usr/lib/python2.7/future.py").exists()
        on_disk = {"/" + k for k, v in tree_snapshot(config.root).items()
                   if k != "var" and not k.startswith("var/")}
        owned = set()
        for e in vdb.entries():
            owned |= e.owned_paths()
        assert on_disk == owned
        assert "/usr/lib/python2.7/future.py" in entry.owned_paths()


class TestVdbFormat:
    def test_contents_roundtrip(self):
        for line in ["obj /usr/bin/x sha256:" + "ab" * 32, "dir /usr", "sym /usr/lib/a -> b.so"]:
            assert ContentsEntry.parse(line).render() == line

    def test_bad_contents(self):
        with pytest.raises(FormatError):
            ContentsEntry.parse("blob /x")

    def test_build_env_quoting_roundtrip(self, tmp_path):
        vdb = Vdb(tmp_path)
        env = {"CFLAGS": 'a "quoted" $x', "LDFLAGS": "-Wl,--rpath,/p", "FEATURES": ""}
        vdb.write_entry(VdbEntry(parse_cpv("a/b-1"), build_env=env))
        assert vdb.get("a/b-1").build_env == env

    def test_world_slot_atom(self, tmp_path):
        vdb = Vdb(tmp_path)
        vdb.init()
        vdb.add_world(parse_cpv("dev-lang/python-2.7.12", slot="2.7"))
        vdb.add_world(parse_cpv("app-misc/a-1"))
        assert vdb.world_file.read_text() == "app-misc/a\ndev-lang/python:2.7\n"
        assert [str(a) for a in vdb.world()] == ["app-misc/a", "dev-lang/python:2.7"]
