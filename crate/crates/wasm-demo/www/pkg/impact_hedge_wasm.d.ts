/* tslint:disable */
/* eslint-disable */

export class HedgePath {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    claim: number;
    price: number;
    terminal_error: number;
    /**
     * Rows `[t, B₁, S̃₁, H₁, W]`, one per rebalancing date.
     */
    readonly rows: Float64Array;
}

export class PriceSummary {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * NaN when the utility is a mixture.
     */
    closed_form: number;
    dimension: number;
    horizon: number;
    price: number;
    psi_residual: number;
    unique: boolean;
}

/**
 * Replicates the claim along path `seed` with `steps` rebalancing dates.
 */
export function hedge_path(toml: string, steps: number, seed: bigint): HedgePath;

export function preset(name: string): string | undefined;

export function preset_names(): string[];

export function price(toml: string): PriceSummary;

/**
 * Rows `[b, S̃₁, ĝ, σ̃₁₁, H₁]` at time `t` for `n` levels of the first
 * coordinate in `[lo, hi]`; other coordinates sit at 0.
 */
export function surface_slice(toml: string, t: number, lo: number, hi: number, n: number): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_get_hedgepath_claim: (a: number) => number;
    readonly __wbg_get_hedgepath_price: (a: number) => number;
    readonly __wbg_get_hedgepath_terminal_error: (a: number) => number;
    readonly __wbg_get_pricesummary_closed_form: (a: number) => number;
    readonly __wbg_get_pricesummary_dimension: (a: number) => number;
    readonly __wbg_get_pricesummary_horizon: (a: number) => number;
    readonly __wbg_get_pricesummary_price: (a: number) => number;
    readonly __wbg_get_pricesummary_psi_residual: (a: number) => number;
    readonly __wbg_get_pricesummary_unique: (a: number) => number;
    readonly __wbg_hedgepath_free: (a: number, b: number) => void;
    readonly __wbg_pricesummary_free: (a: number, b: number) => void;
    readonly __wbg_set_hedgepath_claim: (a: number, b: number) => void;
    readonly __wbg_set_hedgepath_price: (a: number, b: number) => void;
    readonly __wbg_set_hedgepath_terminal_error: (a: number, b: number) => void;
    readonly __wbg_set_pricesummary_closed_form: (a: number, b: number) => void;
    readonly __wbg_set_pricesummary_dimension: (a: number, b: number) => void;
    readonly __wbg_set_pricesummary_horizon: (a: number, b: number) => void;
    readonly __wbg_set_pricesummary_price: (a: number, b: number) => void;
    readonly __wbg_set_pricesummary_psi_residual: (a: number, b: number) => void;
    readonly __wbg_set_pricesummary_unique: (a: number, b: number) => void;
    readonly hedge_path: (a: number, b: number, c: number, d: bigint) => [number, number, number];
    readonly hedgepath_rows: (a: number) => [number, number];
    readonly preset: (a: number, b: number) => [number, number];
    readonly preset_names: () => [number, number];
    readonly price: (a: number, b: number) => [number, number, number];
    readonly surface_slice: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_drop_slice: (a: number, b: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
