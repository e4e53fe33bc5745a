mod common;

use common::{check_vcd, check_vhdl};

const PROC: &str = "architecture rtl of t is
    signal s : std_logic := '0';
begin
    p : process (clk)
        variable v : std_logic := '0';
    begin
        v := '1';
        s <= v;
    end process;
end architecture rtl;
";

#[test]
fn vhdl_checker_accepts_correct_operators() {
    assert_eq!(check_vhdl(PROC).unwrap().assignments, 2);
}

#[test]
fn vhdl_checker_rejects_swapped_operators() {
    assert!(check_vhdl(&PROC.replace("v := '1'", "v <= '1'")).is_err());
    assert!(check_vhdl(&PROC.replace("s <= v", "s := v")).is_err());
    assert!(check_vhdl(&PROC.replace("s <= v", "q <= v")).is_err());
}

const VCD: &str = "$timescale 1ns $end
$scope module tb $end
$var wire 1 ! clk $end
$var wire 4 \" n $end
$upscope $end
$enddefinitions $end
#0
$dumpvars
0!
b0 \"
$end
#1
1!
b11 \"
";

#[test]
fn vcd_checker_counts_changes() {
    let s = check_vcd(VCD).unwrap();
    assert_eq!((s.vars, s.initial_lines, s.change_lines), (2, 2, 2));
}

#[test]
fn vcd_checker_rejects_bad_input() {
    assert!(check_vcd(&VCD.replace("#1", "#0")).is_err());
    assert!(check_vcd(&VCD.replace("b11 \"", "b11111 \"")).is_err());
    assert!(check_vcd(&VCD.replace("1!", "1?")).is_err());
    assert!(check_vcd(&VCD.replace("$upscope $end\n", "")).is_err());
}
