/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Users that start a planted chain; good first queries.
     */
    chain_starts(): Float64Array;
    leaves_json(): string;
    /**
     * User whose nearest sample is closest to `(x, y)`.
     */
    nearest_user(x: number, y: number): number | undefined;
    /**
     * Generates `users` trajectories with a few planted contact chains and
     * indexes them with leaf capacity `theta`.
     */
    constructor(seed: number, users: number, theta: number);
    /**
     * Root region as `[min_x, min_y, max_x, max_y]`.
     */
    region(): Float64Array;
    /**
     * Traces `user` for `levels` levels with thresholds `psi` meters and
     * `tau` seconds on both indexes.
     */
    trace_json(user: number, psi: number, tau: number, levels: number): string;
    trajectories_json(): string;
}

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_chain_starts: (a: number) => [number, number];
    readonly demo_leaves_json: (a: number) => [number, number];
    readonly demo_nearest_user: (a: number, b: number, c: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_region: (a: number) => [number, number];
    readonly demo_trace_json: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly demo_trajectories_json: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
