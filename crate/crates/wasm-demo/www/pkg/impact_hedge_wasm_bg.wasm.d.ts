/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_get_hedgepath_claim: (a: number) => number;
export const __wbg_get_hedgepath_price: (a: number) => number;
export const __wbg_get_hedgepath_terminal_error: (a: number) => number;
export const __wbg_get_pricesummary_closed_form: (a: number) => number;
export const __wbg_get_pricesummary_dimension: (a: number) => number;
export const __wbg_get_pricesummary_horizon: (a: number) => number;
export const __wbg_get_pricesummary_price: (a: number) => number;
export const __wbg_get_pricesummary_psi_residual: (a: number) => number;
export const __wbg_get_pricesummary_unique: (a: number) => number;
export const __wbg_hedgepath_free: (a: number, b: number) => void;
export const __wbg_pricesummary_free: (a: number, b: number) => void;
export const __wbg_set_hedgepath_claim: (a: number, b: number) => void;
export const __wbg_set_hedgepath_price: (a: number, b: number) => void;
export const __wbg_set_hedgepath_terminal_error: (a: number, b: number) => void;
export const __wbg_set_pricesummary_closed_form: (a: number, b: number) => void;
export const __wbg_set_pricesummary_dimension: (a: number, b: number) => void;
export const __wbg_set_pricesummary_horizon: (a: number, b: number) => void;
export const __wbg_set_pricesummary_price: (a: number, b: number) => void;
export const __wbg_set_pricesummary_psi_residual: (a: number, b: number) => void;
export const __wbg_set_pricesummary_unique: (a: number, b: number) => void;
export const hedge_path: (a: number, b: number, c: number, d: bigint) => [number, number, number];
export const hedgepath_rows: (a: number) => [number, number];
export const preset: (a: number, b: number) => [number, number];
export const preset_names: () => [number, number];
export const price: (a: number, b: number) => [number, number, number];
export const surface_slice: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
