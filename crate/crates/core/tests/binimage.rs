use packsense::binimage::{load_image, BinaryImage, Format, ImageError};
use packsense::corpus::pe::{write_pe32, SectionSpec, BSS, CODE, DATA};
use packsense::disasm::Mode;
use proptest::prelude::*;

fn two_sections() -> Vec<SectionSpec> {
    vec![
        SectionSpec::new(".text", vec![0x90; 0x321], CODE),
        SectionSpec::new(".data", (0..=255).collect(), DATA),
    ]
}

#[test]
fn pe_roundtrip_against_writer() {
    let pe = write_pe32(&two_sections(), 0x400000);
    let img = load_image(pe.bytes.clone(), None).unwrap();
    assert_eq!(img.format(), Format::Pe);
    assert_eq!(img.image_base(), 0x400000);
    assert_eq!(img.mode(), Mode::X86_32);
    assert_eq!(img.sections().len(), 2);
    for (parsed, placed) in img.sections().iter().zip(&pe.sections) {
        assert_eq!(parsed.name, placed.name);
        assert_eq!(parsed.file_offset, placed.file_offset as usize);
        assert_eq!(parsed.file_size, placed.file_size as usize);
        assert_eq!(parsed.virtual_address, 0x400000 + u64::from(placed.rva));
        assert_eq!(parsed.virtual_size, u64::from(placed.virtual_size));
    }
    assert_eq!(img.section_bytes(&img.sections()[1]), &(0..=255).collect::<Vec<u8>>()[..]);
}

#[test]
fn pe_valid_range_ends_at_last_section() {
    // Sections at RVA 0x1000 (0x1000 bytes) ... ending at RVA 0x9000.
    let specs = vec![
        SectionSpec::new(".text", vec![0xC3; 0x1000], CODE),
        SectionSpec { virtual_size: 0x7000, ..SectionSpec::new(".data", vec![1; 0x10], DATA) },
    ];
    let pe = write_pe32(&specs, 0x400000);
    let last = pe.sections.last().unwrap();
    assert_eq!(last.rva + last.virtual_size, 0x9000);
    let img = load_image(pe.bytes, None).unwrap();
    let range = img.valid_memory_range();
    assert_eq!(range.intervals(), &[(0x400000, 0x409000)]);
    for s in img.sections() {
        assert!(range.contains(s.virtual_address));
    }
    assert!(!range.contains(0x400000u64.wrapping_sub(0x6281719)));
}

#[test]
fn zero_size_section_is_kept() {
    let mut specs = two_sections();
    specs.push(SectionSpec { virtual_size: 0x400, ..SectionSpec::new(".bss", Vec::new(), BSS) });
    let img = load_image(write_pe32(&specs, 0x400000).bytes, None).unwrap();
    assert_eq!(img.sections().len(), 3);
    let bss = &img.sections()[2];
    assert_eq!(bss.name, ".bss");
    assert!(img.section_bytes(bss).is_empty());
    assert_eq!(bss.virtual_size, 0x400);
}

#[test]
fn truncated_section_table_is_malformed() {
    let pe = write_pe32(&two_sections(), 0x400000);
    // keep the headers up to the middle of the second section header
    let cut = 0x40 + 4 + 20 + 0xE0 + 40 + 20;
    let err = load_image(pe.bytes[..cut].to_vec(), None).unwrap_err();
    assert!(matches!(err, ImageError::MalformedHeader(_)), "{err}");
}

#[test]
fn pe_section_count_claiming_too_much() {
    let mut bytes = write_pe32(&two_sections(), 0x400000).bytes;
    bytes[0x40 + 4 + 2..0x40 + 4 + 4].copy_from_slice(&0xFFFFu16.to_le_bytes());
    assert!(matches!(load_image(bytes, None), Err(ImageError::MalformedHeader(_))));
}

#[test]
fn format_hint() {
    let pe = write_pe32(&two_sections(), 0x400000).bytes;
    assert_eq!(load_image(pe.clone(), Some(Format::Raw)).unwrap().format(), Format::Raw);
    assert!(load_image(vec![1, 2, 3], Some(Format::Pe)).is_err());
    assert!(load_image(vec![1, 2, 3], Some(Format::Elf)).is_err());
}

#[test]
fn mz_without_pe_signature_is_raw() {
    let mut bytes = vec![0u8; 0x80];
    bytes[..2].copy_from_slice(b"MZ");
    assert_eq!(load_image(bytes, None).unwrap().format(), Format::Raw);
}

#[test]
fn elf_fixtures() {
    let img = load_image(include_bytes!("../fixtures/hello32.elf").to_vec(), None).unwrap();
    assert_eq!(img.format(), Format::Elf);
    assert_eq!(img.mode(), Mode::X86_32);
    let names: Vec<_> = img.sections().iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, [".rodata", ".text", ".bss"]);
    assert_eq!(img.image_base(), 0x400000);
    let text = &img.sections()[1];
    assert_eq!((text.file_offset, text.file_size, text.virtual_address), (0xf0, 0x72, 0x4010f0));
    let range = img.valid_memory_range();
    assert_eq!(range.intervals(), &[(0x400000, 0x402168)]);

    let img = load_image(include_bytes!("../fixtures/hello64.elf").to_vec(), None).unwrap();
    assert_eq!(img.mode(), Mode::X86_64);
    assert!(img.sections().iter().any(|s| s.name == ".text"));
}

#[test]
fn elf_truncated_section_table() {
    let bytes = include_bytes!("../fixtures/hello32.elf");
    let err = load_image(bytes[..0x260].to_vec(), None).unwrap_err();
    assert!(matches!(err, ImageError::MalformedHeader(_)));
}

fn check_invariants(img: &BinaryImage) {
    let mut ranges: Vec<_> = img.sections().iter().map(|s| s.file_range()).filter(|r| !r.is_empty()).collect();
    ranges.sort_by_key(|r| r.start);
    for w in ranges.windows(2) {
        assert!(w[0].end <= w[1].start);
    }
    for s in img.sections() {
        assert!(s.file_offset + s.file_size <= img.total_size());
    }
}

proptest! {
    #[test]
    fn writer_roundtrip(sizes in prop::collection::vec((0usize..3000, 0u32..0x5000), 1..6)) {
        let specs: Vec<_> = sizes
            .iter()
            .enumerate()
            .map(|(i, &(len, extra))| SectionSpec {
                virtual_size: len as u32 + extra,
                ..SectionSpec::new(&format!(".s{i}"), vec![i as u8 + 1; len], DATA)
            })
            .collect();
        let pe = write_pe32(&specs, 0x10000000);
        let img = load_image(pe.bytes.clone(), None).unwrap();
        prop_assert_eq!(img.sections().len(), specs.len());
        for (parsed, placed) in img.sections().iter().zip(&pe.sections) {
            prop_assert_eq!(parsed.file_offset, placed.file_offset as usize);
            prop_assert_eq!(parsed.file_size, placed.file_size as usize);
            prop_assert_eq!(parsed.virtual_address, 0x10000000 + u64::from(placed.rva));
            prop_assert!(img.valid_memory_range().contains(parsed.virtual_address));
        }
        check_invariants(&img);
    }

    #[test]
    fn arbitrary_buffers_never_panic(bytes in prop::collection::vec(any::<u8>(), 1..512), magic in 0usize..3) {
        let mut bytes = bytes;
        match magic {
            1 if bytes.len() >= 2 => bytes[..2].copy_from_slice(b"MZ"),
            2 if bytes.len() >= 4 => bytes[..4].copy_from_slice(b"\x7fELF"),
            _ => {}
        }
        if let Ok(img) = load_image(bytes.clone(), None) {
            check_invariants(&img);
            prop_assert_eq!(&img, &load_image(bytes, None).unwrap());
        }
    }

    #[test]
    fn corrupted_pe_headers_never_panic(flips in prop::collection::vec((0usize..0x200, any::<u8>()), 1..8)) {
        let mut bytes = write_pe32(&two_sections(), 0x400000).bytes;
        for (at, v) in flips {
            bytes[at] = v;
        }
        if let Ok(img) = load_image(bytes, None) {
            check_invariants(&img);
        }
    }
}
