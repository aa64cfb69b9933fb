use std::path::Path;
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 8] = [
    "ingest",
    "preprocess",
    "train",
    "eval",
    "hpsearch",
    "gan-train",
    "gan-sample",
    "plot",
];

fn yelpimg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_yelpimg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const CSV: &str = "epoch,train_loss,val_loss,train_top1,val_top1\n1,1.2,1.3,0.4,0.35\n2,0.9,1.1,0.6,0.5\n3,0.7,1.0,0.7,0.55\n";

#[test]
fn help_lists_every_subcommand() {
    let o = yelpimg(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    let out = text(&o.stdout);
    for c in SUBCOMMANDS {
        assert!(out.contains(c), "{c} missing from:\n{out}");
    }
    assert_eq!(yelpimg::cli::dispatch(["yelpimg", "--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    let o = yelpimg(&["plot", "--out", "x", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("--bogus-flag"));
    let o = yelpimg(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("frobnicate"));
    assert_eq!(
        yelpimg::cli::dispatch(["yelpimg", "train", "--epochs", "many"]),
        1
    );
}

#[test]
fn plot_renders_metrics_and_reports_missing_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    std::fs::write(&csv, CSV).unwrap();
    let fig = dir.path().join("fig");
    let o = yelpimg(&["plot", "--metrics", s(&csv), "--out", s(&fig)]);
    assert_eq!(o.status.code(), Some(0), "{}", text(&o.stderr));
    let loss = std::fs::read(fig.join("loss.png")).unwrap();
    let acc = std::fs::read(fig.join("accuracy.png")).unwrap();
    assert!(image::load_from_memory(&loss).is_ok() && image::load_from_memory(&acc).is_ok());
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), CSV);

    let again = dir.path().join("fig2");
    assert_eq!(
        yelpimg(&["plot", "--metrics", s(&csv), "--out", s(&again)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(std::fs::read(again.join("loss.png")).unwrap(), loss);

    let single = dir.path().join("one.csv");
    std::fs::write(
        &single,
        "epoch,train_loss,val_loss,train_top1,val_top1\n1,0.5,0.6,0.7,0.8\n",
    )
    .unwrap();
    let o = yelpimg(&[
        "plot",
        "--metrics",
        s(&single),
        "--out",
        s(&dir.path().join("fig3")),
    ]);
    assert_eq!(o.status.code(), Some(0));

    let bad = dir.path().join("bad.csv");
    std::fs::write(
        &bad,
        "epoch,train_loss,train_top1,val_top1\n1,0.5,0.7,0.8\n",
    )
    .unwrap();
    let o = yelpimg(&[
        "plot",
        "--metrics",
        s(&bad),
        "--out",
        s(&dir.path().join("fig4")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o.stderr).contains("val_loss"), "{}", text(&o.stderr));
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.yimg");
    let o = yelpimg(&[
        "eval",
        "--checkpoint",
        s(&dir.path().join("best.ywts")),
        "--store",
        s(&missing),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(
        yelpimg(&["plot", "--out", s(dir.path())]).status.code(),
        Some(2)
    );
}

fn write_dataset(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf, std::path::PathBuf) {
    let business = dir.join("business.json");
    let stars = [3.0, 4.0, 5.0];
    let biz: String = stars
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!("{{\"business_id\":\"b{i}\",\"name\":\"Place {i}\",\"stars\":{s}}}\n")
        })
        .collect();
    std::fs::write(&business, biz).unwrap();
    let photos = dir.join("photos.json");
    let imgs = dir.join("images");
    std::fs::create_dir(&imgs).unwrap();
    let mut lines = String::new();
    for i in 0..60 {
        let b = i % 3;
        lines.push_str(&format!("{{\"photo_id\":\"p{i:03}\",\"business_id\":\"b{b}\",\"caption\":\"\",\"label\":\"inside\"}}\n"));
        let level = [30u8, 128, 220][b];
        let img = image::RgbImage::from_fn(40 + i as u32, 30, |x, _| {
            image::Rgb([level, level, (x * 2) as u8])
        });
        img.save(imgs.join(format!("p{i:03}.png"))).unwrap();
    }
    std::fs::write(&photos, lines).unwrap();
    (business, photos, imgs)
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let (business, photos, imgs) = write_dataset(dir);
    let before = (
        std::fs::read(&business).unwrap(),
        std::fs::read(&photos).unwrap(),
    );
    let ok = |o: Output| {
        assert_eq!(o.status.code(), Some(0), "stderr:\n{}", text(&o.stderr));
        text(&o.stdout)
    };

    let ing = dir.join("ingest");
    let out = ok(yelpimg(&[
        "ingest",
        "--business",
        s(&business),
        "--photos",
        s(&photos),
        "--out",
        s(&ing),
    ]));
    assert!(out.contains("inside\t60 photos"), "{out}");
    assert_eq!(
        (
            std::fs::read(&business).unwrap(),
            std::fs::read(&photos).unwrap()
        ),
        before
    );
    let manifest = yelpimg::ingest::manifest_path(&ing, yelpimg::ingest::Label::Inside);
    assert!(ing.join("histogram.csv").is_file());

    let stores = dir.join("stores");
    ok(yelpimg(&[
        "preprocess",
        "--manifest",
        s(&manifest),
        "--images",
        s(&imgs),
        "--out",
        s(&stores),
        "--gan-partition",
    ]));
    use yelpimg::imageprep::{gan_store_path, split_store_path};
    use yelpimg::ingest::{Label, Split, StarClass};
    let train = split_store_path(&stores, Label::Inside, Split::Train);
    let val = split_store_path(&stores, Label::Inside, Split::Val);
    assert_eq!(yelpimg::imageprep::read_store(&train).unwrap().len(), 54);

    let run = dir.join("run");
    let train_args = [
        "train",
        "--train-store",
        s(&train),
        "--val-store",
        s(&val),
        "--out",
        s(&run),
        "--epochs",
        "2",
        "--batch-size",
        "8",
        "--set",
        "head=bucket",
    ];
    ok(yelpimg(&train_args));
    let best = run.join("best.ywts");
    assert!(best.is_file() && run.join("metrics.csv").is_file() && run.join("loss.png").is_file());
    let first = std::fs::read(&best).unwrap();
    std::fs::remove_dir_all(&run).unwrap();
    ok(yelpimg(&train_args));
    assert_eq!(
        std::fs::read(&best).unwrap(),
        first,
        "seeded training is reproducible"
    );

    let out = ok(yelpimg(&[
        "eval",
        "--checkpoint",
        s(&best),
        "--store",
        s(&val),
    ]));
    let ck = yelpimg::trainer::load_checkpoint(&best).unwrap();
    assert!(out.contains(&format!("top1 {}", ck.meta.val_top1)), "{out}");

    let search = dir.join("search");
    let out = ok(yelpimg(&[
        "hpsearch",
        "--train-store",
        s(&train),
        "--val-store",
        s(&val),
        "--out",
        s(&search),
        "--epochs",
        "1",
        "--set",
        "head=bucket",
        "--budget",
        "3",
        "--dim",
        "lr:log:-3:-2",
    ]));
    assert!(!out.is_empty());

    let fig = dir.join("fig");
    ok(yelpimg(&[
        "plot",
        "--metrics",
        s(&run.join("metrics.csv")),
        "--histogram",
        s(&ing.join("histogram.csv")),
        "--out",
        s(&fig),
    ]));
    assert!(fig.join("loss.png").is_file() && fig.join("accuracy.png").is_file());

    let gstore = gan_store_path(
        &stores.join("gan"),
        Label::Inside,
        StarClass::from_raw(4.0).unwrap(),
    );
    let gan = dir.join("gan");
    ok(yelpimg(&[
        "gan-train",
        "--store",
        s(&gstore),
        "--out",
        s(&gan),
        "--checkpoint-every",
        "2",
        "--steps",
        "4",
        "--set",
        "height=12",
        "--set",
        "width=16",
        "--set",
        "batch_size=4",
        "--set",
        "gen_channels=4",
        "--set",
        "disc_channels=4",
        "--set",
        "z_dim=8",
        "--set",
        "grid_count=4",
    ]));
    let ck2 = gan.join("ckpt_0002.ywts");
    assert!(gan.join("ckpt_0001.ywts").is_file() && ck2.is_file());
    let a = dir.join("a.png");
    let b = dir.join("b.png");
    ok(yelpimg(&[
        "gan-sample",
        "--checkpoint",
        s(&ck2),
        "--count",
        "4",
        "--seed",
        "3",
        "--out",
        s(&a),
    ]));
    ok(yelpimg(&[
        "gan-sample",
        "--checkpoint",
        s(&ck2),
        "--count",
        "4",
        "--seed",
        "3",
        "--out",
        s(&b),
    ]));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let img = image::open(&a).unwrap();
    assert_eq!((img.width(), img.height()), (32, 24));
}
